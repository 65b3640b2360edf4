"""Line-delimited manifest persistence plus lossless mask/image files.

Manifests hold one record per line (UTF-8 JSON, stable field order) so they
stream, diff, and merge cleanly. Image and mask paths inside records are
relative to the manifest's directory, which keeps a whole run directory
relocatable and byte-comparable across runs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
from PIL import Image

from .core import (
    ConceptVariation,
    FilterScores,
    GeneratedSample,
    ImageRef,
    ObjectTag,
    SourcePair,
    ValidationError,
    VariationGroup,
)

PathLike = Union[str, Path]


class ManifestError(ValueError):
    """Raised for malformed or invariant-violating manifest lines."""

    def __init__(self, path: PathLike, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class MaskFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# record <-> dataclass

def _tag_record(tag: ObjectTag) -> dict:
    return {"label": tag.label, "source": tag.source}


def _image_record(ref: ImageRef) -> dict:
    return {"id": ref.id, "path": ref.path, "width": ref.width, "height": ref.height}


def sample_to_record(sample: GeneratedSample) -> dict:
    rec = {
        "id": sample.id,
        "source_pair_id": sample.source_pair_id,
        "tag": _tag_record(sample.tag),
        "variation": {
            "object": _tag_record(sample.variation.object),
            "portrayal": sample.variation.portrayal,
            "keyword": sample.variation.keyword,
        },
        "image": _image_record(sample.image),
        "caption": sample.caption,
        "used_fallback": sample.used_fallback,
        "multi_instance": sample.multi_instance,
    }
    # optional fields are omitted, never null-emitted
    if sample.source_caption is not None:
        rec["source_caption"] = sample.source_caption
    if sample.mask_path is not None:
        rec["mask_path"] = sample.mask_path
    if sample.mask_coverage_pct is not None:
        rec["mask_coverage_pct"] = sample.mask_coverage_pct
    if sample.scores is not None:
        s = sample.scores
        scores = {
            "itm_variation": s.itm_variation,
            "itm_original": s.itm_original,
            "area_score_pct": s.area_score_pct,
            "passed": s.passed,
        }
        if s.delta_in_mask is not None:
            scores["delta_in_mask"] = s.delta_in_mask
        rec["scores"] = scores
    rec["status"] = sample.status
    return rec


def _parse_tag(rec: dict) -> ObjectTag:
    return ObjectTag(label=rec["label"], source=rec.get("source", "detector"))


def _parse_image(rec: dict) -> ImageRef:
    return ImageRef(id=rec["id"], path=rec["path"],
                    width=int(rec["width"]), height=int(rec["height"]))


def record_to_sample(rec: dict) -> GeneratedSample:
    scores = None
    if "scores" in rec:
        s = rec["scores"]
        scores = FilterScores(
            itm_variation=float(s["itm_variation"]),
            itm_original=float(s["itm_original"]),
            area_score_pct=float(s["area_score_pct"]),
            delta_in_mask=(float(s["delta_in_mask"]) if "delta_in_mask" in s else None),
            passed=bool(s["passed"]),
        )
    var = rec["variation"]
    return GeneratedSample(
        id=rec["id"],
        source_pair_id=rec["source_pair_id"],
        tag=_parse_tag(rec["tag"]),
        variation=ConceptVariation(
            object=_parse_tag(var["object"]),
            portrayal=var["portrayal"],
            keyword=var["keyword"],
        ),
        image=_parse_image(rec["image"]),
        caption=rec["caption"],
        source_caption=rec.get("source_caption"),
        used_fallback=bool(rec.get("used_fallback", False)),
        multi_instance=bool(rec.get("multi_instance", False)),
        mask_path=rec.get("mask_path"),
        mask_coverage_pct=(float(rec["mask_coverage_pct"])
                           if "mask_coverage_pct" in rec else None),
        scores=scores,
        status=rec.get("status", "raw"),
    )


def pair_to_record(pair: SourcePair) -> dict:
    rec = {
        "id": pair.id,
        "image": _image_record(pair.image),
        "caption": pair.caption,
    }
    if pair.generated_caption is not None:
        rec["generated_caption"] = pair.generated_caption
    rec["split"] = pair.split
    return rec


def record_to_pair(rec: dict) -> SourcePair:
    return SourcePair(
        id=rec["id"],
        image=_parse_image(rec["image"]),
        caption=rec["caption"],
        generated_caption=rec.get("generated_caption"),
        split=rec.get("split", "train"),
    )


# ---------------------------------------------------------------------------
# manifest files

def _dump_line(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(",", ":"))


def _load_lines(path: PathLike, parse, what: str) -> list:
    out = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(path, line_no, f"malformed {what} line: {exc}") from exc
            try:
                item = parse(rec)
            except ValidationError as exc:
                raise ManifestError(path, line_no, f"invalid {what}: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(path, line_no,
                                    f"malformed {what} record: {exc!r}") from exc
            if item.id in seen_ids:
                raise ManifestError(path, line_no,
                                    f"duplicate {what} id {item.id!r} in manifest")
            seen_ids.add(item.id)
            out.append(item)
    return out


def load_manifest(path: PathLike) -> List[GeneratedSample]:
    """Load a generated-sample manifest; errors carry the offending line number."""
    return _load_lines(path, record_to_sample, "sample")


def save_manifest(samples: Iterable[GeneratedSample], path: PathLike) -> None:
    """Write samples one-per-line; load_manifest(save_manifest(x)) == x."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(_dump_line(sample_to_record(sample)) + "\n")


def load_pairs(path: PathLike) -> List[SourcePair]:
    return _load_lines(path, record_to_pair, "pair")


def save_pairs(pairs: Iterable[SourcePair], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(_dump_line(pair_to_record(pair)) + "\n")


def group_samples(samples: Iterable[GeneratedSample]) -> List[VariationGroup]:
    """Reassemble variation groups from a flat manifest, in manifest order."""
    order = []
    grouped = {}
    for sample in samples:
        key = (sample.source_pair_id, sample.tag)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(sample)
    return [VariationGroup(source_pair_id=k[0], tag=k[1], samples=tuple(grouped[k]))
            for k in order]


# ---------------------------------------------------------------------------
# images and masks (lossless PNG)

def save_image(array: np.ndarray, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array, dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_mask(bitmap: np.ndarray, path: PathLike) -> None:
    """Encode a binary grid as a single-channel PNG, 255 = object."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.where(np.asarray(bitmap).astype(bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    bad = np.unique(arr[(arr != 0) & (arr != 255)])
    if bad.size:
        raise MaskFormatError(
            f"{path}: mask pixels must be 0 or 255, found values {bad.tolist()}")
    return arr == 255


def mask_coverage_pct(bitmap: np.ndarray) -> float:
    bitmap = np.asarray(bitmap).astype(bool)
    return 100.0 * float(np.count_nonzero(bitmap)) / bitmap.size


def resolve_path(manifest_path: PathLike, relpath: str) -> Path:
    """Resolve a record's relative path against its manifest's directory."""
    rel = Path(relpath)
    if rel.is_absolute():
        return rel
    return Path(manifest_path).parent / rel


def rebase_sample_paths(samples: Iterable[GeneratedSample],
                        src_manifest: PathLike,
                        dst_manifest: PathLike) -> List[GeneratedSample]:
    """Rewrite relative image/mask paths so they stay valid when a manifest is
    written to a different directory than the one it was loaded from."""
    import os
    from dataclasses import replace

    src_dir = Path(src_manifest).parent.resolve()
    dst_dir = Path(dst_manifest).parent.resolve()
    if src_dir == dst_dir:
        return list(samples)
    out = []
    for sample in samples:
        image = sample.image
        if not Path(image.path).is_absolute():
            image = replace(image, path=os.path.relpath(src_dir / image.path,
                                                        dst_dir))
        mask_path = sample.mask_path
        if mask_path is not None and not Path(mask_path).is_absolute():
            mask_path = os.path.relpath(src_dir / mask_path, dst_dir)
        out.append(replace(sample, image=image, mask_path=mask_path))
    return out

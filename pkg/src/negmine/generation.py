"""Scene decomposition, concept augmentation, caption editing, and inpainting
orchestration: source pairs in, variation groups out.

Work parallelizes per source pair; every random choice is derived from
(config.seed, pair id, ...) so the merged output is identical regardless of
worker scheduling.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends import BackendSet, BackendError, InpainterBackend
from .core import (
    ConceptVariation,
    GeneratedSample,
    GenerationConfig,
    ImageRef,
    ObjectTag,
    SegmentMask,
    SourcePair,
    VariationGroup,
)
from .manifest import load_image, save_image, save_mask
from .seeding import rng_from, stable_hash

log = logging.getLogger(__name__)

FAILURE_WRONG_MASK = "object tag leads to wrong mask"
FAILURE_MULTI_INSTANCE = "confusion due to multiple instances"


class TemplateError(ValueError):
    pass


class CaptionEditError(ValueError):
    pass


# ---------------------------------------------------------------------------
# prompt building and response parsing

@dataclass(frozen=True)
class PromptTemplate:
    """Prompt scaffold for the concept augmenter.

    `context_slot` and `query_slot` must each contain their placeholder
    exactly once; in-context examples are rendered in the same grammar the
    response parser expects.
    """

    instruction: str
    icl_examples: Tuple[ConceptVariation, ...]
    context_slot: str = "Context: {caption}"
    query_slot: str = "Object: {object}"

    def __post_init__(self):
        object.__setattr__(self, "icl_examples", tuple(self.icl_examples))
        if len(self.icl_examples) < 1:
            raise TemplateError("template needs at least one in-context example")
        if self.context_slot.count("{caption}") != 1:
            raise TemplateError("context slot must contain '{caption}' exactly once")
        if self.query_slot.count("{object}") != 1:
            raise TemplateError("query slot must contain '{object}' exactly once")


def default_template() -> PromptTemplate:
    return PromptTemplate(
        instruction=(
            "You rewrite one object from a scene into a different but plausible "
            "variation of it. Each variation names a new kind or appearance of "
            "the object that still fits the rest of the scene."
        ),
        icl_examples=(
            ConceptVariation(
                object=ObjectTag(label="bread"),
                portrayal="a freshly baked loaf with a golden crust",
                keyword="freshly baked loaf",
            ),
            ConceptVariation(
                object=ObjectTag(label="bird"),
                portrayal="a black and white bald eagle",
                keyword="bald eagle",
            ),
        ),
    )


def build_prompt(template: PromptTemplate, context_caption: str,
                 obj: ObjectTag, k: int, keyword_word_limit: int = 3) -> str:
    """Render the full augmentation prompt for one object query."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    parts = [template.instruction, "", "Examples:"]
    for example in template.icl_examples:
        parts.append(template.query_slot.format(object=example.object.label))
        parts.append(f"{example.keyword}: {example.portrayal}")
        parts.append("")
    if context_caption:
        parts.append(template.context_slot.format(caption=context_caption))
    parts.append(template.query_slot.format(object=obj.label))
    noun = "variation" if k == 1 else "variations"
    parts.append(
        f"Propose {k} {noun}, one per line, in the form \"keyword: portrayal\". "
        f"Use at most {keyword_word_limit} words for each keyword."
    )
    return "\n".join(parts)


_LINE_MARKER = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


@dataclass(frozen=True)
class ParseReport:
    dropped: Tuple[Tuple[str, str], ...]  # (line, reason)

    def __len__(self):
        return len(self.dropped)


def parse_variations(response: str, k: int, keyword_word_limit: int,
                     obj: ObjectTag) -> Tuple[List[ConceptVariation], ParseReport]:
    """Parse up to k "keyword: portrayal" lines; bad lines are dropped and
    reported, never fatal. An empty result means the caller skips the object."""
    variations: List[ConceptVariation] = []
    dropped: List[Tuple[str, str]] = []
    for raw_line in response.splitlines():
        if len(variations) >= k:
            break
        line = _LINE_MARKER.sub("", raw_line).strip()
        if not line:
            continue
        if ":" not in line:
            dropped.append((raw_line, "no 'keyword: portrayal' delimiter"))
            continue
        keyword, portrayal = (part.strip() for part in line.split(":", 1))
        if not keyword:
            dropped.append((raw_line, "empty keyword"))
            continue
        if not portrayal:
            dropped.append((raw_line, "empty portrayal"))
            continue
        if len(keyword.split()) > keyword_word_limit:
            dropped.append(
                (raw_line, f"keyword exceeds {keyword_word_limit} words"))
            continue
        variations.append(ConceptVariation(object=obj, portrayal=portrayal,
                                           keyword=keyword))
    return variations, ParseReport(dropped=tuple(dropped))


# ---------------------------------------------------------------------------
# scene decomposition and object sampling

@dataclass(frozen=True)
class SceneDecomposition:
    pair: SourcePair  # generated_caption filled in
    tags: Tuple[ObjectTag, ...]
    masks: Dict[str, SegmentMask]  # tag label -> mask
    dropped: Tuple[Tuple[str, str], ...]  # (tag label, failure-mode label)


def decompose_scene(pair: SourcePair, image: np.ndarray, tagger,
                    segmenter) -> SceneDecomposition:
    """Tag the scene, segment each tag, and drop tags whose mask is unusable."""
    try:
        tags, scene_caption = tagger.tag(image)
    except BackendError as exc:
        raise BackendError(f"tagger failed on image {pair.image.id}: {exc}") from exc
    retained: List[ObjectTag] = []
    masks: Dict[str, SegmentMask] = {}
    dropped: List[Tuple[str, str]] = []
    for tag in tags:
        try:
            mask = segmenter.segment(image, tag, pair.image.id)
        except BackendError:
            dropped.append((tag.label, FAILURE_WRONG_MASK))
            continue
        if mask.bitmap.shape != image.shape[:2] or mask.coverage_pct == 0.0:
            dropped.append((tag.label, FAILURE_WRONG_MASK))
            continue
        retained.append(tag)
        masks[tag.label] = mask
    return SceneDecomposition(
        pair=pair.with_generated_caption(scene_caption),
        tags=tuple(retained),
        masks=masks,
        dropped=tuple(dropped),
    )


def sample_objects(tags: Sequence[ObjectTag], m: int, seed: int) -> List[ObjectTag]:
    """Uniformly sample min(m, |tags|) tags without replacement."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    tags = list(tags)
    count = min(m, len(tags))
    picks = rng_from("sample-objects", seed).choice(len(tags), size=count,
                                                    replace=False)
    return [tags[int(i)] for i in picks]


# ---------------------------------------------------------------------------
# caption editing

@dataclass(frozen=True)
class CaptionEdit:
    caption: str
    used_fallback: bool
    multi_instance: bool
    span_start: int          # keyword span within `caption`
    span_end: int
    replaced_text: str       # original text the keyword replaced
    base_caption: str        # caption the edit was applied to

    def restore(self) -> str:
        """Undo the edit: swap the keyword span back for the replaced text."""
        return (self.caption[:self.span_start] + self.replaced_text
                + self.caption[self.span_end:])


def _whole_word(label: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(label) + r"\b", re.IGNORECASE)


def edit_caption(pair: SourcePair, tag: ObjectTag,
                 variation: ConceptVariation) -> CaptionEdit:
    """Replace the first whole-word occurrence of the tag with the keyword.

    Prefers the human caption; falls back to the tagger's scene caption when
    the tag only occurs there. Raises CaptionEditError when the tag occurs in
    neither, or when the replacement would leave the caption unchanged.
    """
    pattern = _whole_word(tag.label)
    for base, fallback in ((pair.caption, False),
                           (pair.generated_caption or "", True)):
        match = pattern.search(base)
        if match is None:
            continue
        edited = base[:match.start()] + variation.keyword + base[match.end():]
        if edited == base:
            raise CaptionEditError(
                f"keyword {variation.keyword!r} leaves caption unchanged "
                f"for tag {tag.label!r}")
        return CaptionEdit(
            caption=edited,
            used_fallback=fallback,
            multi_instance=len(pattern.findall(base)) > 1,
            span_start=match.start(),
            span_end=match.start() + len(variation.keyword),
            replaced_text=match.group(0),
            base_caption=base,
        )
    raise CaptionEditError(
        f"tag {tag.label!r} occurs in neither the human caption nor the "
        f"generated caption of pair {pair.id}")


# ---------------------------------------------------------------------------
# group generation

def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def generate_group(pair: SourcePair, tag: ObjectTag, mask: SegmentMask,
                   variations: Sequence[ConceptVariation],
                   inpainter: InpainterBackend, seed: int, out_dir,
                   source_image: np.ndarray,
                   mask_relpath: Optional[str] = None,
                   ) -> Tuple[Optional[VariationGroup], List[Tuple[str, str]]]:
    """Inpaint one sample per variation (portrayal drives the fill, keyword
    drives the caption) and persist the images. Per-variation failures drop
    only that variation; returns (group or None, [(variation keyword, reason)])."""
    if not variations:
        raise ValueError("generate_group needs at least one variation")
    out_dir = Path(out_dir)
    samples: List[GeneratedSample] = []
    failures: List[Tuple[str, str]] = []
    for index, variation in enumerate(variations):
        try:
            edit = edit_caption(pair, tag, variation)
        except CaptionEditError as exc:
            failures.append((variation.keyword, f"caption edit failed: {exc}"))
            continue
        variation_seed = stable_hash("inpaint-seed", seed, index)
        try:
            image = inpainter.inpaint(source_image, mask, variation.portrayal,
                                      variation_seed)
        except BackendError as exc:
            failures.append((variation.keyword, f"inpainting failed: {exc}"))
            continue
        sample_id = f"{pair.id}--{_slug(tag.label)}--v{index}"
        rel = f"images/{sample_id}.png"
        save_image(image, out_dir / rel)
        samples.append(GeneratedSample(
            id=sample_id,
            source_pair_id=pair.id,
            tag=tag,
            variation=variation,
            image=ImageRef(id=sample_id, path=rel,
                           width=image.shape[1], height=image.shape[0]),
            caption=edit.caption,
            source_caption=pair.caption,
            used_fallback=edit.used_fallback,
            multi_instance=edit.multi_instance,
            mask_path=mask_relpath,
            mask_coverage_pct=mask.coverage_pct,
        ))
    if not samples:
        return None, failures
    return VariationGroup(source_pair_id=pair.id, tag=tag,
                          samples=tuple(samples)), failures


# ---------------------------------------------------------------------------
# full pipeline

@dataclass
class GenerationResult:
    groups: List[VariationGroup] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)
    failure_modes: Dict[str, int] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)

    @property
    def samples(self) -> List[GeneratedSample]:
        return [sample for group in self.groups for sample in group.samples]

    def to_report(self) -> dict:
        return {
            "counters": dict(sorted(self.counters.items())),
            "failure_modes": dict(sorted(self.failure_modes.items())),
            "skipped": list(self.skipped),
        }


_COUNTER_KEYS = (
    "pairs_in", "pairs_processed", "pairs_failed", "tags_detected",
    "tags_dropped", "objects_sampled", "variations_parsed",
    "variation_lines_dropped", "objects_without_variations",
    "samples_generated", "groups_generated", "sample_failures",
)


def _process_pair(pair: SourcePair, config: GenerationConfig,
                  backends: BackendSet, out_dir: Path, pairs_root: Path,
                  template: PromptTemplate) -> GenerationResult:
    result = GenerationResult(counters={key: 0 for key in _COUNTER_KEYS})
    counters = result.counters
    counters["pairs_in"] = 1
    image_path = Path(pair.image.path)
    if not image_path.is_absolute():
        image_path = pairs_root / image_path
    try:
        image = load_image(image_path)
    except OSError as exc:
        counters["pairs_failed"] = 1
        result.skipped.append(f"{pair.id}: image unreadable: {exc}")
        return result
    try:
        scene = decompose_scene(pair, image, backends.tagger, backends.segmenter)
    except BackendError as exc:
        counters["pairs_failed"] = 1
        result.skipped.append(f"{pair.id}: {exc}")
        return result
    counters["tags_detected"] = len(scene.tags) + len(scene.dropped)
    counters["tags_dropped"] = len(scene.dropped)
    for _, mode in scene.dropped:
        result.failure_modes[mode] = result.failure_modes.get(mode, 0) + 1
    if not scene.tags:
        result.skipped.append(f"{pair.id}: no usable tags")
        counters["pairs_processed"] = 1
        return result
    pair = scene.pair
    selected = sample_objects(scene.tags, config.objects_per_image,
                              stable_hash(config.seed, "objects", pair.id))
    counters["objects_sampled"] = len(selected)
    for tag in selected:
        prompt = build_prompt(template, pair.caption, tag,
                              config.variations_per_object,
                              config.keyword_word_limit)
        try:
            response = backends.augmenter.complete(prompt)
        except BackendError as exc:
            result.skipped.append(f"{pair.id}/{tag.label}: augmenter failed: {exc}")
            continue
        variations, report = parse_variations(
            response, config.variations_per_object, config.keyword_word_limit, tag)
        counters["variations_parsed"] += len(variations)
        counters["variation_lines_dropped"] += len(report)
        if not variations:
            counters["objects_without_variations"] += 1
            result.skipped.append(f"{pair.id}/{tag.label}: no parseable variations")
            continue
        mask = scene.masks[tag.label]
        mask_rel = f"masks/{pair.id}--{_slug(tag.label)}.png"
        save_mask(mask.bitmap, out_dir / mask_rel)
        group_seed = stable_hash(config.seed, "group", pair.id, tag.label)
        group, failures = generate_group(
            pair, tag, mask, variations, backends.inpainter, group_seed,
            out_dir, image, mask_relpath=mask_rel)
        counters["sample_failures"] += len(failures)
        for keyword, reason in failures:
            result.skipped.append(f"{pair.id}/{tag.label}/{keyword}: {reason}")
        if group is not None:
            multi = sum(1 for s in group.samples if s.multi_instance)
            if multi:
                result.failure_modes[FAILURE_MULTI_INSTANCE] = \
                    result.failure_modes.get(FAILURE_MULTI_INSTANCE, 0) + multi
            counters["samples_generated"] += len(group)
            counters["groups_generated"] += 1
            result.groups.append(group)
    counters["pairs_processed"] = 1
    return result


def run_generation(pairs: Sequence[SourcePair], config: GenerationConfig,
                   backends: BackendSet, out_dir, pairs_root,
                   template: Optional[PromptTemplate] = None,
                   jobs: Optional[int] = None) -> GenerationResult:
    """Run the full generation pipeline over all pairs.

    Per-pair work runs on a bounded worker pool; outputs merge in input pair
    order, so results are identical for any worker count.
    """
    template = template or default_template()
    out_dir = Path(out_dir)
    pairs_root = Path(pairs_root)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(pair: SourcePair) -> GenerationResult:
        return _process_pair(pair, config, backends, out_dir, pairs_root, template)

    if jobs is not None and jobs <= 1:
        partials = [work(pair) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(work, pairs))

    merged = GenerationResult(counters={key: 0 for key in _COUNTER_KEYS})
    for partial in partials:
        merged.groups.extend(partial.groups)
        merged.skipped.extend(partial.skipped)
        for key, value in partial.counters.items():
            merged.counters[key] = merged.counters.get(key, 0) + value
        for key, value in partial.failure_modes.items():
            merged.failure_modes[key] = merged.failure_modes.get(key, 0) + value
    return merged

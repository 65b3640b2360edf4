"""Two-stage quality gate over variation groups: a per-sample ITM score gate
and a group-level variance-area gate, plus the delta-in-mask diagnostic.

Both gates are strict (score must exceed its threshold); the variance score
is computed once per group and gates every member jointly. Rejected samples
keep their scores so downstream statistics can see the full distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .backends import BackendError, MatcherBackend
from .core import (
    FilterConfig,
    FilterScores,
    GeneratedSample,
    STATUS_PASSED,
    STATUS_REJECTED,
    VariationGroup,
)
from .manifest import load_image, load_mask, resolve_path

REASON_INSUFFICIENT_GROUP = "insufficient group size for variance filter"


class InsufficientGroupError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


def _stacked_channel_deviation(images: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel standard deviation over the group, averaged over channels.

    Population std (divide by n); returns an H x W grid.
    """
    if len(images) < 2:
        raise InsufficientGroupError(
            f"variance needs at least 2 images, got {len(images)}")
    arrays = [np.asarray(image, dtype=np.float64) for image in images]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"images must share dimensions, got {sorted(shapes)}")
    if arrays[0].ndim != 3:
        raise ValueError(f"expected H x W x C images, got shape {arrays[0].shape}")
    stack = np.stack(arrays, axis=0)
    return stack.std(axis=0).mean(axis=-1)


def variance_area_score(images: Sequence[np.ndarray], epsilon: float) -> float:
    """Percentage of pixels whose channel-averaged deviation exceeds epsilon."""
    deviation = _stacked_channel_deviation(images)
    exceeded = deviation > epsilon
    return 100.0 * float(np.count_nonzero(exceeded)) / exceeded.size


def delta_in_mask(images: Sequence[np.ndarray], mask: np.ndarray) -> float:
    """Mean un-thresholded deviation over masked pixels. Diagnostic only."""
    deviation = _stacked_channel_deviation(images)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != deviation.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not match images {deviation.shape}")
    if not mask.any():
        raise EmptyMaskError("delta_in_mask is undefined for an empty mask")
    return float(deviation[mask].mean())


def itm_scores(sample: GeneratedSample, source_caption: str,
               matcher: MatcherBackend, image: np.ndarray) -> Tuple[float, float]:
    """(variation score, original score); only the variation score gates."""
    try:
        variation = matcher.itm_score(image, sample.caption)
        original = matcher.itm_score(image, source_caption)
    except BackendError as exc:
        raise BackendError(f"matcher failed on sample {sample.id}: {exc}") from exc
    return float(variation), float(original)


@dataclass(frozen=True)
class FilterOutcome:
    group: VariationGroup
    area_score_pct: float
    delta: Optional[float]
    reasons: Tuple[str, ...]


def apply_filters(group: VariationGroup, source_caption: str,
                  config: FilterConfig, matcher: MatcherBackend,
                  images: Optional[Sequence[np.ndarray]] = None,
                  manifest_path=None,
                  mask: Optional[np.ndarray] = None) -> FilterOutcome:
    """Score and gate every sample of one group.

    Pixel data comes either from `images` (one array per sample, in order) or
    from disk via `manifest_path`-relative sample paths; same for the group's
    `mask`. Idempotent: rerunning with the same inputs reproduces identical
    scores and statuses.
    """
    if images is None:
        if manifest_path is None:
            raise ValueError("apply_filters needs either images or manifest_path")
        images = [load_image(resolve_path(manifest_path, s.image.path))
                  for s in group.samples]
    if len(images) != len(group.samples):
        raise ValueError(f"got {len(images)} images for {len(group.samples)} samples")

    reasons: List[str] = []
    if len(group.samples) < 2:
        # too small for the variance filter: rejected with reason, area
        # recorded as 0 (no measurable variation evidence)
        area = 0.0
        variance_ok = False
        reasons.append(REASON_INSUFFICIENT_GROUP)
    else:
        area = variance_area_score(images, config.epsilon)
        variance_ok = area > config.area_threshold
        if not variance_ok:
            reasons.append(
                f"area score {area:.4f} not above threshold {config.area_threshold}")

    delta: Optional[float] = None
    if len(group.samples) >= 2:
        if mask is None:
            for sample in group.samples:
                if sample.mask_path is not None and manifest_path is not None:
                    mask = load_mask(resolve_path(manifest_path, sample.mask_path))
                    break
        if mask is not None:
            try:
                delta = delta_in_mask(images, mask)
            except EmptyMaskError:
                delta = None  # reported as not-computable

    scored = []
    for sample, image in zip(group.samples, images):
        variation_score, original_score = itm_scores(
            sample, source_caption, matcher, image)
        itm_ok = variation_score > config.itm_threshold
        passed = bool(itm_ok and variance_ok)
        scores = FilterScores(
            itm_variation=variation_score,
            itm_original=original_score,
            area_score_pct=area,
            delta_in_mask=delta,
            passed=passed,
        )
        scored.append(sample.with_scores(
            scores, STATUS_PASSED if passed else STATUS_REJECTED))
    return FilterOutcome(
        group=VariationGroup(source_pair_id=group.source_pair_id,
                             tag=group.tag, samples=tuple(scored)),
        area_score_pct=area,
        delta=delta,
        reasons=tuple(reasons),
    )


def filter_manifest(groups: Sequence[VariationGroup], config: FilterConfig,
                    matcher: MatcherBackend, manifest_path
                    ) -> Tuple[List[VariationGroup], dict]:
    """Filter every group and build the gate-level report."""
    outcomes = []
    for group in groups:
        source_caption = group.samples[0].source_caption or ""
        outcomes.append(apply_filters(group, source_caption, config, matcher,
                                      manifest_path=manifest_path))
    samples = [s for o in outcomes for s in o.group.samples]
    total = len(samples)
    itm_passes = sum(1 for s in samples
                     if s.scores.itm_variation > config.itm_threshold)
    area_passes = sum(1 for s in samples
                      if s.scores.area_score_pct > config.area_threshold)
    both = sum(1 for s in samples if s.scores.passed)
    report = {
        "samples": total,
        "passed": both,
        "rejected": total - both,
        "pass_rates": {
            "itm": itm_passes / total if total else 0.0,
            "area": area_passes / total if total else 0.0,
            "both": both / total if total else 0.0,
        },
        "groups": [
            {
                "source_pair_id": o.group.source_pair_id,
                "tag": o.group.tag.label,
                "area_score_pct": o.area_score_pct,
                "delta_in_mask": o.delta,
                "passed": sum(1 for s in o.group.samples if s.scores.passed),
                "size": len(o.group),
                "reasons": list(o.reasons),
            }
            for o in outcomes
        ],
    }
    return [o.group for o in outcomes], report

"""Domain records shared across the mining pipeline.

Everything here is an immutable value record: safe to hand to concurrent
workers, compared field-for-field, and serialized losslessly by
:mod:`negmine.manifest`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = [
    "ValidationError",
    "ImageRef",
    "SourcePair",
    "ObjectTag",
    "SegmentMask",
    "ConceptVariation",
    "GeneratedSample",
    "VariationGroup",
    "FilterScores",
    "GenerationConfig",
    "FilterConfig",
    "TrainConfig",
    "Embedding",
    "STATUS_RAW",
    "STATUS_PASSED",
    "STATUS_REJECTED",
    "STATUS_ACCEPTED",
    "STATUS_HUMAN_REJECTED",
    "STATUSES",
    "can_transition",
    "FAILURE_MODES",
]


class ValidationError(ValueError):
    """A record violates one of its invariants. `field_path` names the field."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        self.message = message
        super().__init__(f"{field_path}: {message}")


def _require(cond: bool, field_path: str, message: str) -> None:
    if not cond:
        raise ValidationError(field_path, message)


# ---------------------------------------------------------------------------
# sample lifecycle

STATUS_RAW = "raw"
STATUS_PASSED = "passed"
STATUS_REJECTED = "rejected"
STATUS_ACCEPTED = "accepted"
STATUS_HUMAN_REJECTED = "human_rejected"

STATUSES = (
    STATUS_RAW,
    STATUS_PASSED,
    STATUS_REJECTED,
    STATUS_ACCEPTED,
    STATUS_HUMAN_REJECTED,
)

# Monotone lifecycle: raw -> {passed, rejected} -> {accepted, human_rejected}.
# Self-transitions are allowed so that re-running a stage is idempotent.
_TRANSITIONS = {
    (STATUS_RAW, STATUS_PASSED),
    (STATUS_RAW, STATUS_REJECTED),
    (STATUS_PASSED, STATUS_ACCEPTED),
    (STATUS_PASSED, STATUS_HUMAN_REJECTED),
}


def can_transition(old: str, new: str) -> bool:
    return old == new or (old, new) in _TRANSITIONS


# Failure-mode taxonomy used for run-report tallies and review reject reasons.
FAILURE_MODES = (
    "object tag leads to wrong mask",
    "excessive segmentation",
    "poor inpainting",
    "unusual state of the object",
    "confusion due to multiple instances",
    "high complexity in the image",
    "small mask size",
    "lack of descriptiveness in portrayal",
    "animate objects",
)


# ---------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class ImageRef:
    """Points at an image file; `path` is relative to the owning manifest."""

    id: str
    path: str
    width: int
    height: int

    def __post_init__(self):
        _require(bool(self.id), "image.id", "must be non-empty")
        _require(self.width > 0, "image.width", f"must be > 0, got {self.width}")
        _require(self.height > 0, "image.height", f"must be > 0, got {self.height}")


@dataclass(frozen=True)
class SourcePair:
    """A human-annotated image-caption pair, optionally with the tagger's
    scene caption attached after decomposition."""

    id: str
    image: ImageRef
    caption: str
    generated_caption: Optional[str] = None
    split: str = "train"

    def __post_init__(self):
        _require(bool(self.id), "id", "must be non-empty")
        _require(bool(self.caption), "caption", "must be non-empty")
        _require(self.split in ("train", "test"), "split",
                 f"must be 'train' or 'test', got {self.split!r}")

    def with_generated_caption(self, caption: str) -> "SourcePair":
        return replace(self, generated_caption=caption)


@dataclass(frozen=True)
class ObjectTag:
    """A detected (or manually added) object label, lowercase-normalized."""

    label: str
    source: str = "detector"

    def __post_init__(self):
        object.__setattr__(self, "label", self.label.strip().lower())
        _require(bool(self.label), "tag.label", "must be non-empty")
        _require(self.source in ("detector", "manual"), "tag.source",
                 f"must be 'detector' or 'manual', got {self.source!r}")


@dataclass(frozen=True, eq=False)
class SegmentMask:
    """Binary object mask. `bitmap` is a bool H x W grid, True = object."""

    image_id: str
    tag: ObjectTag
    bitmap: np.ndarray
    coverage_pct: float

    def __post_init__(self):
        _require(self.bitmap.ndim == 2, "mask.bitmap",
                 f"must be 2-D, got shape {self.bitmap.shape}")
        if self.bitmap.dtype != np.bool_:
            object.__setattr__(self, "bitmap", self.bitmap.astype(bool))
        self.bitmap.setflags(write=False)
        expected = 100.0 * float(np.count_nonzero(self.bitmap)) / self.bitmap.size
        _require(abs(self.coverage_pct - expected) <= 1e-6, "mask.coverage_pct",
                 f"stored {self.coverage_pct} but bitmap gives {expected}")

    @classmethod
    def from_bitmap(cls, image_id: str, tag: ObjectTag, bitmap: np.ndarray) -> "SegmentMask":
        bitmap = np.asarray(bitmap).astype(bool)
        coverage = 100.0 * float(np.count_nonzero(bitmap)) / bitmap.size
        return cls(image_id=image_id, tag=tag, bitmap=bitmap, coverage_pct=coverage)

    @property
    def shape(self):
        return self.bitmap.shape

    def matches_image(self, image: ImageRef) -> bool:
        h, w = self.bitmap.shape
        return w == image.width and h == image.height

    def __eq__(self, other):
        if not isinstance(other, SegmentMask):
            return NotImplemented
        return (self.image_id == other.image_id and self.tag == other.tag
                and self.coverage_pct == other.coverage_pct
                and np.array_equal(self.bitmap, other.bitmap))


@dataclass(frozen=True)
class ConceptVariation:
    """One LLM-proposed replacement: a detailed portrayal that drives
    inpainting and a short keyword that substitutes into the caption."""

    object: ObjectTag
    portrayal: str
    keyword: str

    def __post_init__(self):
        _require(bool(self.portrayal.strip()), "variation.portrayal", "must be non-empty")
        _require(bool(self.keyword.strip()), "variation.keyword", "must be non-empty")

    @property
    def keyword_words(self) -> int:
        return len(self.keyword.split())


@dataclass(frozen=True)
class FilterScores:
    """Gate scores for one generated sample.

    `delta_in_mask` is None when not computable (empty mask); it never gates.
    `passed` must equal the conjunction of the two configured gates; this is
    enforced where the thresholds are known (see filtering.apply_filters).
    """

    itm_variation: float
    itm_original: float
    area_score_pct: float
    delta_in_mask: Optional[float]
    passed: bool

    def __post_init__(self):
        _require(math.isfinite(self.itm_variation), "scores.itm_variation", "must be finite")
        _require(math.isfinite(self.itm_original), "scores.itm_original", "must be finite")
        _require(0.0 <= self.area_score_pct <= 100.0, "scores.area_score_pct",
                 f"must be in [0, 100], got {self.area_score_pct}")
        if self.delta_in_mask is not None:
            _require(self.delta_in_mask >= 0.0, "scores.delta_in_mask",
                     f"must be >= 0, got {self.delta_in_mask}")


@dataclass(frozen=True)
class GeneratedSample:
    """One synthesized hard-negative variant of a source pair."""

    id: str
    source_pair_id: str
    tag: ObjectTag
    variation: ConceptVariation
    image: ImageRef
    caption: str
    source_caption: Optional[str] = None
    used_fallback: bool = False
    multi_instance: bool = False
    mask_path: Optional[str] = None
    mask_coverage_pct: Optional[float] = None
    scores: Optional[FilterScores] = None
    status: str = STATUS_RAW

    def __post_init__(self):
        _require(bool(self.id), "id", "must be non-empty")
        _require(bool(self.caption), "caption", "must be non-empty")
        _require(self.status in STATUSES, "status",
                 f"must be one of {STATUSES}, got {self.status!r}")
        if self.source_caption is not None and not self.used_fallback:
            _require(self.caption != self.source_caption, "caption",
                     "must differ from the source caption unless the fallback path was used")
        if self.mask_coverage_pct is not None:
            _require(0.0 <= self.mask_coverage_pct <= 100.0, "mask_coverage_pct",
                     f"must be in [0, 100], got {self.mask_coverage_pct}")

    def with_status(self, new_status: str) -> "GeneratedSample":
        if not can_transition(self.status, new_status):
            raise ValidationError(
                "status", f"illegal transition {self.status!r} -> {new_status!r}")
        return replace(self, status=new_status)

    def with_scores(self, scores: FilterScores, status: str) -> "GeneratedSample":
        if not can_transition(self.status, status):
            raise ValidationError(
                "status", f"illegal transition {self.status!r} -> {status!r}")
        return replace(self, scores=scores, status=status)


@dataclass(frozen=True)
class VariationGroup:
    """All variants generated for one (source pair, object) unit."""

    source_pair_id: str
    tag: ObjectTag
    samples: tuple

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        _require(len(self.samples) >= 1, "group.samples", "must hold at least one sample")
        dims = {(s.image.width, s.image.height) for s in self.samples}
        _require(len(dims) == 1, "group.samples",
                 f"all samples must share image dimensions, got {sorted(dims)}")
        for s in self.samples:
            _require(s.source_pair_id == self.source_pair_id and s.tag == self.tag,
                     "group.samples", f"sample {s.id} belongs to a different group")

    def __len__(self):
        return len(self.samples)


# ---------------------------------------------------------------------------
# configs

DEFAULT_KEYWORD_WORD_LIMIT = 3


@dataclass(frozen=True)
class GenerationConfig:
    objects_per_image: int = 3
    variations_per_object: int = 4
    keyword_word_limit: int = DEFAULT_KEYWORD_WORD_LIMIT
    seed: int = 0

    def __post_init__(self):
        _require(self.objects_per_image >= 1, "objects_per_image",
                 f"must be >= 1, got {self.objects_per_image}")
        _require(self.variations_per_object >= 1, "variations_per_object",
                 f"must be >= 1, got {self.variations_per_object}")
        _require(self.keyword_word_limit >= 1, "keyword_word_limit",
                 f"must be >= 1, got {self.keyword_word_limit}")


@dataclass(frozen=True)
class FilterConfig:
    # area_threshold 14 is the published operating point; epsilon is a
    # per-pixel deviation cutoff on the 0-255 intensity scale.
    itm_threshold: float = 0.0
    area_threshold: float = 14.0
    epsilon: float = 2.0

    def __post_init__(self):
        _require(0.0 <= self.area_threshold <= 100.0, "area_threshold",
                 f"must be in [0, 100], got {self.area_threshold}")
        _require(self.epsilon > 0.0, "epsilon", f"must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 400
    mix_ratio: float = 0.5
    temperature: float = 0.07
    learning_rate: float = 1e-6
    weight_decay: float = 0.2
    epochs: int = 20
    embedding_dim: int = 64

    def __post_init__(self):
        _require(self.batch_size >= 1, "batch_size", f"must be >= 1, got {self.batch_size}")
        _require(0.0 <= self.mix_ratio <= 1.0, "mix_ratio",
                 f"must be in [0, 1], got {self.mix_ratio}")
        _require(self.temperature > 0.0, "temperature",
                 f"must be > 0, got {self.temperature}")
        _require(self.epochs >= 0, "epochs", f"must be >= 0, got {self.epochs}")
        _require(self.embedding_dim >= 1, "embedding_dim",
                 f"must be >= 1, got {self.embedding_dim}")


@dataclass(frozen=True, eq=False)
class Embedding:
    """A d-dimensional embedding with finite entries."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        _require(vec.ndim == 1, "embedding.vector", f"must be 1-D, got shape {vec.shape}")
        _require(bool(np.all(np.isfinite(vec))), "embedding.vector",
                 "entries must be finite")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return np.array_equal(self.vector, other.vector)

"""Dataset statistics over any samples manifest: filter-score histograms,
item/phrase uniqueness and repetition counts, and the per-item mask-coverage
vs delta table. All reports are pure functions of the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import GeneratedSample


class NoScoredSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class Histogram:
    bin_edges: Tuple[float, ...]
    counts: Tuple[int, ...]
    mean: float
    median: float

    def __post_init__(self):
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("counts must have one entry per bin")

    @property
    def total(self) -> int:
        return sum(self.counts)

    def as_dict(self) -> dict:
        return {
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
            "mean": self.mean,
            "median": self.median,
        }


def histogram(values: Sequence[float], bins: int = 30) -> Histogram:
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise NoScoredSamplesError("cannot build a histogram of zero values")
    counts, edges = np.histogram(values, bins=bins)
    return Histogram(
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        mean=float(values.mean()),
        median=float(np.median(values)),
    )


@dataclass(frozen=True)
class ScoreHistograms:
    itm_variation: Histogram
    area_score: Histogram
    joint_x_edges: Tuple[float, ...]  # itm_variation axis
    joint_y_edges: Tuple[float, ...]  # area_score axis
    joint_counts: Tuple[Tuple[int, ...], ...]

    def as_dict(self) -> dict:
        return {
            "itm_variation": self.itm_variation.as_dict(),
            "area_score": self.area_score.as_dict(),
            "joint": {
                "x_edges": list(self.joint_x_edges),
                "y_edges": list(self.joint_y_edges),
                "counts": [list(row) for row in self.joint_counts],
            },
        }


def score_histograms(samples: Sequence[GeneratedSample], bins: int = 30,
                     joint_bins: int = 50) -> ScoreHistograms:
    """Histograms over every scored sample, rejected ones included."""
    scored = [s for s in samples if s.scores is not None]
    if not scored:
        raise NoScoredSamplesError("manifest has no scored samples")
    itm = [s.scores.itm_variation for s in scored]
    area = [s.scores.area_score_pct for s in scored]
    joint_counts, x_edges, y_edges = np.histogram2d(itm, area, bins=joint_bins)
    return ScoreHistograms(
        itm_variation=histogram(itm, bins=bins),
        area_score=histogram(area, bins=bins),
        joint_x_edges=tuple(float(e) for e in x_edges),
        joint_y_edges=tuple(float(e) for e in y_edges),
        joint_counts=tuple(tuple(int(c) for c in row) for row in joint_counts),
    )


# ---------------------------------------------------------------------------
# uniqueness / repetition

def whitespace_tokenizer(text: str) -> List[str]:
    return text.split()


@dataclass(frozen=True)
class UniquenessReport:
    item_count: int            # distinct tag labels
    phrase_count: int          # distinct portrayals
    word_count: int            # distinct whitespace words over portrayals
    token_count: int           # distinct tokens per the configured tokenizer
    item_frequencies: Dict[str, int]
    phrase_frequencies: Dict[str, int]
    singleton_items: Tuple[str, ...]
    singleton_phrases: Tuple[str, ...]
    item_repetition_histogram: Dict[int, int]    # occurrences -> item count
    phrase_repetition_histogram: Dict[int, int]

    def as_dict(self) -> dict:
        return {
            "items": self.item_count,
            "phrases": self.phrase_count,
            "words": self.word_count,
            "tokens": self.token_count,
            "singleton_items": len(self.singleton_items),
            "singleton_phrases": len(self.singleton_phrases),
            "item_repetition_histogram": {
                str(k): v for k, v in sorted(self.item_repetition_histogram.items())},
            "phrase_repetition_histogram": {
                str(k): v for k, v in sorted(self.phrase_repetition_histogram.items())},
        }


def _repetition_histogram(freqs: Dict[str, int]) -> Dict[int, int]:
    out: Dict[int, int] = {}
    for count in freqs.values():
        out[count] = out.get(count, 0) + 1
    return out


def uniqueness_report(samples: Sequence[GeneratedSample],
                      tokenizer: Optional[Callable[[str], List[str]]] = None
                      ) -> UniquenessReport:
    tokenizer = tokenizer or whitespace_tokenizer
    item_freqs: Dict[str, int] = {}
    phrase_freqs: Dict[str, int] = {}
    words, tokens = set(), set()
    for sample in samples:
        label = sample.tag.label
        phrase = sample.variation.portrayal
        item_freqs[label] = item_freqs.get(label, 0) + 1
        phrase_freqs[phrase] = phrase_freqs.get(phrase, 0) + 1
        words.update(whitespace_tokenizer(phrase))
        tokens.update(tokenizer(phrase))
    return UniquenessReport(
        item_count=len(item_freqs),
        phrase_count=len(phrase_freqs),
        word_count=len(words),
        token_count=len(tokens),
        item_frequencies=dict(sorted(item_freqs.items())),
        phrase_frequencies=dict(sorted(phrase_freqs.items())),
        singleton_items=tuple(sorted(k for k, v in item_freqs.items() if v == 1)),
        singleton_phrases=tuple(sorted(k for k, v in phrase_freqs.items() if v == 1)),
        item_repetition_histogram=_repetition_histogram(item_freqs),
        phrase_repetition_histogram=_repetition_histogram(phrase_freqs),
    )


# ---------------------------------------------------------------------------
# per-item mask coverage vs delta

@dataclass(frozen=True)
class MaskDeltaRow:
    label: str
    samples: int
    median_mask_coverage_pct: float
    median_delta_in_mask: float
    median_itm_variation: Optional[float]
    median_itm_original: Optional[float]


@dataclass(frozen=True)
class MaskDeltaTable:
    rows: Tuple[MaskDeltaRow, ...]
    excluded: int  # samples lacking delta or coverage

    def as_dict(self) -> dict:
        return {
            "excluded": self.excluded,
            "rows": [
                {
                    "label": r.label,
                    "samples": r.samples,
                    "median_mask_coverage_pct": r.median_mask_coverage_pct,
                    "median_delta_in_mask": r.median_delta_in_mask,
                    "median_itm_variation": r.median_itm_variation,
                    "median_itm_original": r.median_itm_original,
                }
                for r in self.rows
            ],
        }


def mask_delta_table(samples: Sequence[GeneratedSample]) -> MaskDeltaTable:
    """Per tag label: median mask coverage and median delta-in-mask, sorted by
    sample count (then label). Samples without both values are excluded."""
    usable: Dict[str, List[GeneratedSample]] = {}
    excluded = 0
    for sample in samples:
        delta = sample.scores.delta_in_mask if sample.scores else None
        if delta is None or sample.mask_coverage_pct is None:
            excluded += 1
            continue
        usable.setdefault(sample.tag.label, []).append(sample)

    def _median(values: List[float]) -> float:
        return float(np.median(np.asarray(values, dtype=np.float64)))

    rows = []
    for label, group in usable.items():
        itm_v = [s.scores.itm_variation for s in group]
        itm_o = [s.scores.itm_original for s in group]
        rows.append(MaskDeltaRow(
            label=label,
            samples=len(group),
            median_mask_coverage_pct=_median([s.mask_coverage_pct for s in group]),
            median_delta_in_mask=_median([s.scores.delta_in_mask for s in group]),
            median_itm_variation=_median(itm_v),
            median_itm_original=_median(itm_o),
        ))
    rows.sort(key=lambda r: (-r.samples, r.label))
    return MaskDeltaTable(rows=tuple(rows), excluded=excluded)

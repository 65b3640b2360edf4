"""Compositional-reasoning metrics over groups of matched caption/image pairs.

A group of k members is scored from its k x k similarity matrix, entry (a, b)
= s(caption_a, image_b). All metrics are comparison-based with strict
inequalities (ties fail), so any strictly monotone transform of the
similarities leaves every score unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Embedding
from .manifest import load_image, resolve_path
from .seeding import image_digest


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class EvalMember:
    caption: str
    image: object  # ndarray, or a path string resolved against the groups file
    caption_id: Optional[str] = None
    image_id: Optional[str] = None

    def image_key(self) -> str:
        if self.image_id is not None:
            return self.image_id
        if isinstance(self.image, np.ndarray):
            return image_digest(self.image)
        return str(self.image)


@dataclass(frozen=True)
class EvalGroup:
    members: Tuple[EvalMember, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise ValueError(f"eval group needs k >= 2 members, got {len(self.members)}")
        captions = [m.caption for m in self.members]
        if len(set(captions)) != len(captions):
            raise ValueError("group captions must be pairwise distinct")
        keys = [m.image_key() for m in self.members]
        if len(set(keys)) != len(keys):
            raise ValueError("group images must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class GroupSimilarity:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError(f"similarity must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("similarity entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        return self.entries.shape[0]


def _entries(sim) -> np.ndarray:
    if isinstance(sim, GroupSimilarity):
        return sim.entries
    return GroupSimilarity(entries=np.asarray(sim, dtype=np.float64)).entries


# ---------------------------------------------------------------------------
# scores

def pair_scores(sim) -> Tuple[int, int, int]:
    """Winoground-style (text, image, group) 0/1 scores for a 2x2 matrix."""
    s = _entries(sim)
    if s.shape != (2, 2):
        raise DimensionError(f"pair_scores needs a 2x2 matrix, got {s.shape}")
    text = int(s[0, 0] > s[1, 0] and s[1, 1] > s[0, 1])
    image = int(s[0, 0] > s[0, 1] and s[1, 1] > s[1, 0])
    return text, image, text * image


@dataclass(frozen=True)
class GroupScores:
    text_all: int
    image_all: int
    group_all: int
    text_1: float
    image_1: float
    group_1: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "Text All": float(self.text_all),
            "Image All": float(self.image_all),
            "Group All": float(self.group_all),
            "Text 1": self.text_1,
            "Image 1": self.image_1,
            "Group 1": self.group_1,
        }


def group_scores(sim) -> GroupScores:
    """All-members and member-level argmax scores for a k x k matrix.

    A member is text-correct when its caption strictly wins its image's
    column, image-correct when its image strictly wins its caption's row.
    The "All" scores require every member correct; the "1" scores are the
    member-level fractions.
    """
    s = _entries(sim)
    k = s.shape[0]
    if k < 2:
        raise DimensionError(f"group_scores needs k >= 2, got {k}")
    off_diag = ~np.eye(k, dtype=bool)
    diag = np.diag(s)
    # caption b must strictly beat every other caption on image b (column b)
    text_correct = np.array([
        bool(np.all(diag[b] > s[:, b][off_diag[:, b]])) for b in range(k)])
    # image a must strictly beat every other image for caption a (row a)
    image_correct = np.array([
        bool(np.all(diag[a] > s[a, :][off_diag[a, :]])) for a in range(k)])
    both = text_correct & image_correct
    return GroupScores(
        text_all=int(text_correct.all()),
        image_all=int(image_correct.all()),
        group_all=int(text_correct.all() and image_correct.all()),
        text_1=float(text_correct.mean()),
        image_1=float(image_correct.mean()),
        group_1=float(both.mean()),
    )


# ---------------------------------------------------------------------------
# test-set evaluation

class EvalBackendError(RuntimeError):
    pass


def group_similarity(group: EvalGroup, matcher=None,
                     embeddings: Optional[Dict[str, np.ndarray]] = None,
                     groups_path=None) -> GroupSimilarity:
    """Similarity matrix for one group, from a matcher or precomputed
    embeddings (cosine either way)."""
    if embeddings is not None:
        text_vecs, image_vecs = [], []
        for member in group.members:
            if member.caption_id is None or member.image_id is None:
                raise EvalBackendError(
                    "precomputed embeddings need caption_id and image_id per member")
            try:
                text_vecs.append(np.asarray(embeddings[member.caption_id], float))
                image_vecs.append(np.asarray(embeddings[member.image_id], float))
            except KeyError as exc:
                raise EvalBackendError(f"missing embedding for id {exc}") from exc
    elif matcher is not None:
        text_vecs, image_vecs = [], []
        for member in group.members:
            image = member.image
            if isinstance(image, str):
                path = resolve_path(groups_path, image) if groups_path else image
                try:
                    image = load_image(path)
                except OSError as exc:
                    raise EvalBackendError(f"cannot load image {image}: {exc}") from exc
            try:
                text_vecs.append(matcher.embed_text(member.caption).vector)
                image_vecs.append(matcher.embed_image(image).vector)
            except Exception as exc:
                raise EvalBackendError(f"matcher failed: {exc}") from exc
    else:
        raise ValueError("group_similarity needs a matcher or embeddings")
    texts = np.stack(text_vecs)
    images = np.stack(image_vecs)
    texts = texts / np.linalg.norm(texts, axis=1, keepdims=True)
    images = images / np.linalg.norm(images, axis=1, keepdims=True)
    return GroupSimilarity(entries=texts @ images.T)


def evaluate_testset(groups: Sequence[EvalGroup], matcher=None,
                     embeddings: Optional[Dict[str, np.ndarray]] = None,
                     groups_path=None) -> dict:
    """Average group scores over all groups, x100, with a size breakdown.

    Groups whose members cannot be scored are excluded and counted.
    """
    metric_names = ("Text All", "Image All", "Group All",
                    "Text 1", "Image 1", "Group 1")
    per_size: Dict[int, List[GroupScores]] = {}
    excluded = 0
    for group in groups:
        try:
            sim = group_similarity(group, matcher=matcher, embeddings=embeddings,
                                   groups_path=groups_path)
        except EvalBackendError:
            excluded += 1
            continue
        per_size.setdefault(group.k, []).append(group_scores(sim))

    def _average(scores: List[GroupScores]) -> Dict[str, float]:
        acc = {name: 0.0 for name in metric_names}
        for s in scores:
            for name, value in s.as_dict().items():
                acc[name] += value
        return {name: 100.0 * acc[name] / len(scores) for name in metric_names}

    all_scores = [s for scores in per_size.values() for s in scores]
    report = {
        "groups": len(all_scores),
        "excluded": excluded,
        "metrics": _average(all_scores) if all_scores else
                   {name: None for name in metric_names},
        "by_group_size": {
            k: {"groups": len(scores), "metrics": _average(scores)}
            for k, scores in sorted(per_size.items())
        },
    }
    return report


# ---------------------------------------------------------------------------
# retrieval

def retrieval_hits_at_k(query_embeddings, candidate_embeddings,
                        ground_truth: Sequence[int], k: int) -> float:
    """Fraction of queries whose true candidate lands in the cosine top-k.

    A tie group straddling the rank-k boundary counts as a miss; a tie group
    that fits entirely inside the top-k counts as a hit.
    """
    queries = np.asarray(query_embeddings, dtype=np.float64)
    candidates = np.asarray(candidate_embeddings, dtype=np.float64)
    if queries.ndim != 2 or candidates.ndim != 2:
        raise ValueError("embeddings must be 2-D (items x dim)")
    if len(ground_truth) != queries.shape[0]:
        raise ValueError("one ground-truth index per query required")
    if k < 1 or k > candidates.shape[0]:
        raise ValueError(f"k must be in [1, {candidates.shape[0]}], got {k}")
    queries = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    candidates = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    cosines = queries @ candidates.T
    hits = 0
    for row, true_index in zip(cosines, ground_truth):
        if not 0 <= true_index < candidates.shape[0]:
            raise ValueError(f"ground-truth index {true_index} out of range")
        true_score = row[true_index]
        greater = int(np.count_nonzero(row > true_score))
        tied = int(np.count_nonzero(row == true_score))  # includes the truth
        if greater + tied <= k:
            hits += 1
    return hits / len(ground_truth)


def rank_candidates(scores: Sequence[float]) -> List[int]:
    """Candidate indices by descending score, ties broken by stable index."""
    scores = np.asarray(scores, dtype=np.float64)
    return list(np.lexsort((np.arange(scores.shape[0]), -scores)))


def macro_average(per_category_scores) -> float:
    """Unweighted mean across categories."""
    if isinstance(per_category_scores, dict):
        values = list(per_category_scores.values())
    else:
        values = list(per_category_scores)
    if not values:
        raise ValueError("macro_average needs at least one category")
    return float(np.mean([float(v) for v in values]))


# ---------------------------------------------------------------------------
# benchmark file adapters (thin ingest shims)

def load_eval_groups(path) -> List[EvalGroup]:
    """Native groups manifest: one JSON object per line with a `members` list
    of {caption, image, caption_id?, image_id?}."""
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            members = tuple(
                EvalMember(caption=m["caption"], image=m.get("image"),
                           caption_id=m.get("caption_id"),
                           image_id=m.get("image_id"))
                for m in rec["members"])
            groups.append(EvalGroup(members=members))
    return groups


def load_winoground_jsonl(path) -> List[EvalGroup]:
    """Winoground-layout records: {id, caption_0, caption_1, image_0, image_1}."""
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            members = (
                EvalMember(caption=rec["caption_0"], image=rec["image_0"],
                           caption_id=f"{rec['id']}:c0", image_id=f"{rec['id']}:i0"),
                EvalMember(caption=rec["caption_1"], image=rec["image_1"],
                           caption_id=f"{rec['id']}:c1", image_id=f"{rec['id']}:i1"),
            )
            groups.append(EvalGroup(members=members))
    return groups


@dataclass(frozen=True)
class RetrievalInstance:
    """One image-to-text retrieval case (ARO/CREPE style)."""

    image: object
    candidates: Tuple[str, ...]
    true_index: int
    category: str = "default"

    def __post_init__(self):
        if not 0 <= self.true_index < len(self.candidates):
            raise ValueError(
                f"true_index {self.true_index} out of range for "
                f"{len(self.candidates)} candidates")


def load_retrieval_jsonl(path) -> List[RetrievalInstance]:
    """Retrieval records: {image, candidates, true_index, category?}."""
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            instances.append(RetrievalInstance(
                image=rec["image"],
                candidates=tuple(rec["candidates"]),
                true_index=int(rec["true_index"]),
                category=rec.get("category", "default"),
            ))
    return instances


def load_embeddings_file(path) -> Dict[str, np.ndarray]:
    """Line-delimited {id, embedding: [d reals]} records."""
    out: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            Embedding(vector=np.asarray(rec["embedding"], dtype=np.float64))
            out[rec["id"]] = np.asarray(rec["embedding"], dtype=np.float64)
    return out

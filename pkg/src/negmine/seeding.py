"""Stable hashing helpers so every mock and sampler is a pure function of
(inputs, seed) across processes and platforms.

Python's builtin hash() is salted per process; everything here goes through
sha256 instead.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(*parts) -> int:
    """64-bit digest of the parts, order- and boundary-sensitive."""
    h = hashlib.sha256()
    for part in parts:
        data = part if isinstance(part, bytes) else str(part).encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return int.from_bytes(h.digest()[:8], "little")


def image_digest(image: np.ndarray) -> str:
    """Content hash of raw pixels (shape-sensitive, format-independent)."""
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.uint8))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode("ascii"))
    h.update(arr.tobytes())
    return h.hexdigest()


def rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(stable_hash(*parts))


def unit_vector(dim: int, *parts) -> np.ndarray:
    """Deterministic pseudo-random point on the unit sphere."""
    v = rng_from(*parts).standard_normal(dim)
    return v / np.linalg.norm(v)


def uniform01(*parts) -> float:
    return stable_hash(*parts) / float(2**64)

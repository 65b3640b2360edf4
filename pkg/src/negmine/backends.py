"""Backend interfaces for the five heavy models the pipeline orchestrates,
plus deterministic mock implementations.

The mocks are pure functions of (inputs, seed): repeated calls agree bitwise,
which is what makes desk-scale pipeline runs reproducible and testable without
any pretrained weights. Real adapters stay behind the same interfaces; only
the remote augmenter has a wire contract here.
"""

from __future__ import annotations

import abc
import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .core import Embedding, ObjectTag, SegmentMask
from .fixtures import (
    AUGMENT_LOOKUP,
    SCENES,
    TAG_VOCABULARY,
    fixture_image,
    synthesize_variations,
)
from .seeding import image_digest, rng_from, uniform01


class BackendError(RuntimeError):
    """A model backend failed or was fed inputs it cannot handle."""


# ---------------------------------------------------------------------------
# interfaces

class TaggerBackend(abc.ABC):
    """image -> (deduplicated object tags, scene caption)"""

    @abc.abstractmethod
    def tag(self, image: np.ndarray) -> Tuple[List[ObjectTag], str]:
        ...


class SegmenterBackend(abc.ABC):
    """(image, tag) -> binary mask over the image"""

    @abc.abstractmethod
    def segment(self, image: np.ndarray, tag: ObjectTag, image_id: str) -> SegmentMask:
        ...


class AugmenterBackend(abc.ABC):
    """prompt text -> raw completion text"""

    @abc.abstractmethod
    def complete(self, prompt: str) -> str:
        ...


class InpainterBackend(abc.ABC):
    """(image, mask, portrayal, seed) -> image of identical dimensions"""

    @abc.abstractmethod
    def inpaint(self, image: np.ndarray, mask: SegmentMask,
                portrayal: str, seed: int) -> np.ndarray:
        ...


class MatcherBackend(abc.ABC):
    """Dual encoder plus an image-text matching head."""

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        ...

    @abc.abstractmethod
    def itm_score(self, image: np.ndarray, text: str) -> float:
        ...

    @abc.abstractmethod
    def embed_image(self, image: np.ndarray) -> Embedding:
        ...

    @abc.abstractmethod
    def embed_text(self, text: str) -> Embedding:
        ...


@dataclass
class BackendSet:
    tagger: TaggerBackend
    segmenter: SegmenterBackend
    augmenter: AugmenterBackend
    inpainter: InpainterBackend
    matcher: MatcherBackend


# ---------------------------------------------------------------------------
# mocks

class MockTagger(TaggerBackend):
    """Returns fixture scenes for known image digests; otherwise draws a
    stable tag set from a seeded vocabulary and captions it to cover every
    tag (the scene caption must mention all detected objects)."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._scene_table = {
            image_digest(fixture_image(name)): scene
            for name, scene in SCENES.items()
        }

    def tag(self, image: np.ndarray) -> Tuple[List[ObjectTag], str]:
        if image is None or np.asarray(image).size == 0:
            raise BackendError("tagger: unreadable image")
        digest = image_digest(image)
        scene = self._scene_table.get(digest)
        if scene is not None:
            return [ObjectTag(label=t) for t in scene.tags], scene.tagger_caption
        rng = rng_from("mock-tagger", self.seed, digest)
        count = int(rng.integers(3, 6))
        picks = list(rng.choice(len(TAG_VOCABULARY), size=count, replace=False))
        labels = [TAG_VOCABULARY[i] for i in picks]
        caption = "a photo of " + ", ".join(labels[:-1]) + " and " + labels[-1]
        return [ObjectTag(label=l) for l in labels], caption


class MockSegmenter(SegmenterBackend):
    """Deterministic rectangular masks; placement and size derive from the
    (image digest, tag) hash so every (image, tag) pair has one fixed mask."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def segment(self, image: np.ndarray, tag: ObjectTag, image_id: str) -> SegmentMask:
        arr = np.asarray(image)
        if arr.ndim != 3:
            raise BackendError(f"segmenter: expected H x W x C image, got {arr.shape}")
        height, width = arr.shape[:2]
        rng = rng_from("mock-segmenter", self.seed, image_digest(arr), tag.label)
        frac_h = rng.uniform(0.2, 0.55)
        frac_w = rng.uniform(0.2, 0.55)
        box_h = max(1, int(round(frac_h * height)))
        box_w = max(1, int(round(frac_w * width)))
        y0 = int(rng.integers(0, height - box_h + 1))
        x0 = int(rng.integers(0, width - box_w + 1))
        bitmap = np.zeros((height, width), dtype=bool)
        bitmap[y0:y0 + box_h, x0:x0 + box_w] = True
        return SegmentMask.from_bitmap(image_id, tag, bitmap)


class MockAugmenter(AugmenterBackend):
    """Emulates an instruction-following LLM for the pipeline's own prompt
    grammar: finds the query object and requested count in the prompt, then
    answers with "keyword: portrayal" lines from the concept lookup table
    (seeded synthesis for unknown objects). A chatty preamble line is included
    on purpose; the parser must ignore it."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, prompt: str) -> str:
        obj = None
        for line in prompt.splitlines():
            if line.startswith("Object: "):
                obj = line[len("Object: "):].strip()
        if not obj:
            raise BackendError("augmenter: no query object found in prompt")
        match = re.search(r"Propose (\d+) variation", prompt)
        count = int(match.group(1)) if match else 1
        known = AUGMENT_LOOKUP.get(obj)
        if known is not None:
            picks = list(known)
            if count > len(picks):
                picks += synthesize_variations(obj, count - len(picks), self.seed)
            picks = picks[:count]
        else:
            picks = synthesize_variations(obj, count, self.seed)
        lines = ["Here are the requested variations:"]
        lines += [f"{keyword}: {portrayal}" for keyword, portrayal in picks]
        return "\n".join(lines)


class MockInpainter(InpainterBackend):
    """Fills the masked region with a pattern seeded by hash(portrayal, seed);
    every pixel outside the mask is bit-identical to the input."""

    def inpaint(self, image: np.ndarray, mask: SegmentMask,
                portrayal: str, seed: int) -> np.ndarray:
        arr = np.asarray(image, dtype=np.uint8)
        if arr.shape[:2] != mask.bitmap.shape:
            raise BackendError(
                f"inpainter: mask {mask.bitmap.shape} does not match "
                f"image {arr.shape[:2]}")
        rng = rng_from("mock-inpainter", portrayal, seed)
        fill = rng.integers(0, 256, size=arr.shape, dtype=np.uint8)
        out = arr.copy()
        out[mask.bitmap] = fill[mask.bitmap]
        return out


class MockMatcher(MatcherBackend):
    """Hash-based embeddings with an optional concept registry.

    Registered contents embed near their concept's anchor direction, so
    matched fixture pairs get high cosine and concept-matched ITM scores are
    positive. Unregistered contents embed as pure seeded noise and score in a
    wide band around zero, which gives pipeline-scale runs a realistic mix of
    gate outcomes while staying deterministic.
    """

    NOISE_SCALE = 0.25
    CONCEPT_ITM_MARGIN = 2.2
    CONCEPT_ITM_JITTER = 0.8
    UNKNOWN_ITM_RANGE = 3.3

    def __init__(self, dim: int = 64, seed: int = 0,
                 concepts: Optional[Dict[str, str]] = None):
        self._dim = dim
        self.seed = seed
        self._concepts: Dict[str, str] = dict(concepts or {})

    @property
    def dim(self) -> int:
        return self._dim

    def _key(self, content: Union[str, np.ndarray]) -> str:
        if isinstance(content, str):
            if not content:
                raise BackendError("matcher: empty text content")
            return "text:" + content
        arr = np.asarray(content)
        if arr.size == 0:
            raise BackendError("matcher: empty image content")
        return "image:" + image_digest(arr)

    def register(self, content: Union[str, np.ndarray], concept: str) -> None:
        self._concepts[self._key(content)] = concept

    def register_pair(self, image: np.ndarray, text: str, concept: str) -> None:
        self.register(image, concept)
        self.register(text, concept)

    def _anchor(self, concept: str) -> np.ndarray:
        v = rng_from("matcher-anchor", self.seed, concept).standard_normal(self._dim)
        return v / np.linalg.norm(v)

    def _noise(self, key: str) -> np.ndarray:
        v = rng_from("matcher-noise", self.seed, key).standard_normal(self._dim)
        return v / np.linalg.norm(v)

    def _embed_key(self, key: str) -> Embedding:
        concept = self._concepts.get(key)
        if concept is None:
            vec = self._noise(key)
        else:
            vec = self._anchor(concept) + self.NOISE_SCALE * self._noise(key)
        return Embedding(vector=vec / np.linalg.norm(vec))

    def embed_image(self, image: np.ndarray) -> Embedding:
        return self._embed_key(self._key(image))

    def embed_text(self, text: str) -> Embedding:
        return self._embed_key(self._key(text))

    def itm_score(self, image: np.ndarray, text: str) -> float:
        ikey, tkey = self._key(image), self._key(text)
        ci, ct = self._concepts.get(ikey), self._concepts.get(tkey)
        if ci is not None and ct is not None:
            base = self.CONCEPT_ITM_MARGIN if ci == ct else -self.CONCEPT_ITM_MARGIN
            jitter = (2.0 * uniform01("matcher-itm", self.seed, ikey, tkey) - 1.0)
            return base + self.CONCEPT_ITM_JITTER * jitter
        u = uniform01("matcher-itm", self.seed, ikey, tkey)
        return self.UNKNOWN_ITM_RANGE * (2.0 * u - 1.0)


def mock_backends(dim: int = 64, seed: int = 0) -> BackendSet:
    return BackendSet(
        tagger=MockTagger(seed=seed),
        segmenter=MockSegmenter(seed=seed),
        augmenter=MockAugmenter(seed=seed),
        inpainter=MockInpainter(),
        matcher=MockMatcher(dim=dim, seed=seed),
    )


# ---------------------------------------------------------------------------
# remote augmenter adapter

class HttpAugmenter(AugmenterBackend):
    """Thin adapter for a remote completion service.

    POSTs {"prompt", "max_tokens", "seed"} as JSON and expects {"text": ...}
    back. Retries with exponential backoff on transport errors and 5xx;
    `max_in_flight` bounds concurrent requests for rate-limited services.
    Responses are cached on disk when a cache directory is configured
    (NEGMINE_CACHE by default).
    """

    def __init__(self, endpoint: str, max_tokens: int = 256, seed: int = 0,
                 timeout: float = 30.0, retries: int = 3, backoff: float = 0.5,
                 max_in_flight: int = 4, cache_dir: Optional[str] = None):
        import httpx

        self.endpoint = endpoint
        self.max_tokens = max_tokens
        self.seed = seed
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout)
        self._slots = threading.Semaphore(max_in_flight)
        cache = cache_dir if cache_dir is not None else os.environ.get("NEGMINE_CACHE")
        self._cache_dir = Path(cache) if cache else None

    def _cache_path(self, prompt: str) -> Optional[Path]:
        if self._cache_dir is None:
            return None
        key = hashlib.sha256(
            f"{self.endpoint}|{self.max_tokens}|{self.seed}|{prompt}".encode("utf-8")
        ).hexdigest()
        return self._cache_dir / f"augmenter-{key}.json"

    def complete(self, prompt: str) -> str:
        import httpx

        cache_path = self._cache_path(prompt)
        if cache_path is not None and cache_path.exists():
            return json.loads(cache_path.read_text(encoding="utf-8"))["text"]
        payload = {"prompt": prompt, "max_tokens": self.max_tokens, "seed": self.seed}
        last_error: Optional[Exception] = None
        with self._slots:
            for attempt in range(self.retries + 1):
                if attempt:
                    time.sleep(self.backoff * (2 ** (attempt - 1)))
                try:
                    response = self._client.post(self.endpoint, json=payload)
                except httpx.HTTPError as exc:
                    last_error = exc
                    continue
                if response.status_code >= 500:
                    last_error = BackendError(
                        f"augmenter endpoint returned {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise BackendError(
                        f"augmenter endpoint returned {response.status_code}: "
                        f"{response.text[:200]}")
                text = response.json().get("text")
                if not isinstance(text, str):
                    raise BackendError("augmenter response missing 'text' field")
                if cache_path is not None:
                    cache_path.parent.mkdir(parents=True, exist_ok=True)
                    cache_path.write_text(json.dumps({"text": text}), encoding="utf-8")
                return text
        raise BackendError(f"augmenter request failed after "
                           f"{self.retries + 1} attempts: {last_error}")

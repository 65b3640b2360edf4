import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negmine.backends import (
    BackendError,
    HttpAugmenter,
    MockAugmenter,
    MockInpainter,
    MockMatcher,
    MockSegmenter,
    MockTagger,
)
from negmine.core import ObjectTag, SegmentMask
from negmine.fixtures import fixture_image


# ---------------------------------------------------------------------------
# tagger

def test_tagger_fixture_scene(seagull_image):
    tags, caption = MockTagger().tag(seagull_image)
    assert {t.label for t in tags} == {"seagull", "water", "ship", "city"}
    assert caption == ("a seagull in the ocean near a harbor with a ship "
                       "and a city in the background")


def test_tagger_deterministic(seagull_image):
    first = MockTagger().tag(seagull_image)
    second = MockTagger().tag(seagull_image)
    assert first == second


def test_tagger_blank_image_stable_golden():
    blank = np.zeros((48, 64, 3), dtype=np.uint8)
    tags, caption = MockTagger(seed=7).tag(blank)
    assert [t.label for t in tags] == ["tree", "bridge", "lamp", "mountain"]
    assert caption == "a photo of tree, bridge, lamp and mountain"


def test_tagger_tags_deduplicated_and_covered_by_caption():
    image = fixture_image("dedup-check")
    tags, caption = MockTagger(seed=3).tag(image)
    labels = [t.label for t in tags]
    assert len(labels) == len(set(labels))
    for label in labels:
        assert label in caption


# ---------------------------------------------------------------------------
# segmenter

def test_segmenter_mask_matches_dimensions(seagull_image):
    mask = MockSegmenter().segment(seagull_image, ObjectTag(label="seagull"), "img")
    assert mask.bitmap.shape == seagull_image.shape[:2]
    assert 0.0 < mask.coverage_pct < 100.0


def test_segmenter_deterministic(seagull_image):
    tag = ObjectTag(label="ship")
    a = MockSegmenter(seed=1).segment(seagull_image, tag, "img")
    b = MockSegmenter(seed=1).segment(seagull_image, tag, "img")
    assert np.array_equal(a.bitmap, b.bitmap)


# ---------------------------------------------------------------------------
# augmenter (mock)

PROMPT = """You rewrite one object.

Examples:
Object: bread
freshly baked loaf: a freshly baked loaf with a golden crust

Context: a bird is standing on a rock
Object: bird
Propose 4 variations, one per line, in the form "keyword: portrayal". Use at most 3 words for each keyword.
"""


def test_augmenter_known_object_uses_lookup():
    response = MockAugmenter().complete(PROMPT)
    assert "bald eagle: a black and white bald eagle" in response


def test_augmenter_unknown_object_synthesizes():
    prompt = PROMPT.replace("Object: bird", "Object: zeppelin")
    response = MockAugmenter(seed=2).complete(prompt)
    lines = [l for l in response.splitlines() if ": a " in l]
    assert len(lines) == 4
    assert response == MockAugmenter(seed=2).complete(prompt)


def test_augmenter_requires_query_object():
    with pytest.raises(BackendError, match="query object"):
        MockAugmenter().complete("no object line here")


# ---------------------------------------------------------------------------
# inpainter

def _mask_of(image, bitmap):
    return SegmentMask.from_bitmap("img", ObjectTag(label="bird"), bitmap)


def test_inpainter_empty_mask_is_identity(seagull_image):
    bitmap = np.zeros(seagull_image.shape[:2], dtype=bool)
    out = MockInpainter().inpaint(seagull_image, _mask_of(seagull_image, bitmap),
                                  "a bald eagle", seed=1)
    assert np.array_equal(out, seagull_image)


def test_inpainter_distinct_portrayals_differ(seagull_image):
    bitmap = np.ones(seagull_image.shape[:2], dtype=bool)
    mask = _mask_of(seagull_image, bitmap)
    a = MockInpainter().inpaint(seagull_image, mask, "a bald eagle", seed=1)
    b = MockInpainter().inpaint(seagull_image, mask, "a brown pelican", seed=1)
    assert (a != b).sum() > 0


def test_inpainter_deterministic(seagull_image):
    bitmap = np.zeros(seagull_image.shape[:2], dtype=bool)
    bitmap[5:20, 10:30] = True
    mask = _mask_of(seagull_image, bitmap)
    a = MockInpainter().inpaint(seagull_image, mask, "a bald eagle", seed=9)
    b = MockInpainter().inpaint(seagull_image, mask, "a bald eagle", seed=9)
    assert np.array_equal(a, b)
    assert a.tobytes() == b.tobytes()


def test_inpainter_dimension_mismatch():
    image = fixture_image("small", width=16, height=16)
    wrong = np.zeros((8, 8), dtype=bool)
    with pytest.raises(BackendError, match="does not match"):
        MockInpainter().inpaint(image, _mask_of(image, wrong), "x", seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_inpainter_never_touches_pixels_outside_mask(mask_seed, fill_seed):
    image = fixture_image("locality")
    rng = np.random.default_rng(mask_seed)
    bitmap = rng.random(image.shape[:2]) > rng.uniform(0.2, 0.95)
    mask = _mask_of(image, bitmap)
    out = MockInpainter().inpaint(image, mask, f"portrayal-{fill_seed}", fill_seed)
    outside = ~bitmap
    assert np.array_equal(out[outside], image[outside])


# ---------------------------------------------------------------------------
# matcher

def test_matcher_embeddings_unit_norm():
    matcher = MockMatcher(dim=64, seed=0)
    for content in ("a caption", "another caption", fixture_image("seagull_ship")):
        if isinstance(content, str):
            vec = matcher.embed_text(content).vector
        else:
            vec = matcher.embed_image(content).vector
        assert vec.shape == (64,)
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


def test_matcher_identical_content_identical_vector():
    matcher = MockMatcher()
    a = matcher.embed_text("a seagull on a rock")
    b = matcher.embed_text("a seagull on a rock")
    assert a == b


def test_matcher_fixture_pairs_rank_correctly():
    # DERIVED oracle: exhaustive check over the registered fixture set
    matcher = MockMatcher(dim=64, seed=0)
    concepts = ["bald eagle", "mountain lake", "historic town",
                "cargo freighter", "granite boulder", "rye loaf"]
    captions, images = [], []
    for i, concept in enumerate(concepts):
        caption = f"a photo of a {concept}"
        image = fixture_image(f"ranked-{i}")
        matcher.register(caption, concept)
        matcher.register(image, concept)
        captions.append(caption)
        images.append(image)
    text_vecs = [matcher.embed_text(c).vector for c in captions]
    image_vecs = [matcher.embed_image(i).vector for i in images]
    for i, j in itertools.product(range(len(concepts)), repeat=2):
        if i == j:
            continue
        matched = float(text_vecs[i] @ image_vecs[i])
        mismatched = float(text_vecs[i] @ image_vecs[j])
        assert matched > mismatched


def test_matcher_itm_scores_deterministic_and_concept_aware(seagull_image):
    matcher = MockMatcher(seed=0)
    matcher.register(seagull_image, "seagull scene")
    matcher.register("a seagull flying", "seagull scene")
    matcher.register("a bowl of soup", "soup")
    matched = matcher.itm_score(seagull_image, "a seagull flying")
    mismatched = matcher.itm_score(seagull_image, "a bowl of soup")
    assert matched > 0 > mismatched
    assert matched == matcher.itm_score(seagull_image, "a seagull flying")


def test_matcher_rejects_empty_content():
    with pytest.raises(BackendError, match="empty"):
        MockMatcher().embed_text("")


# ---------------------------------------------------------------------------
# remote augmenter adapter

class _StubHandler(BaseHTTPRequestHandler):
    requests_seen = []
    fail_first = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).requests_seen.append(payload)
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        body = json.dumps({"text": f"echo: {payload['prompt'][:20]}"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.requests_seen = []
    _StubHandler.fail_first = 0
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/complete"
    server.shutdown()


def test_http_augmenter_request_shape(stub_server):
    augmenter = HttpAugmenter(stub_server, max_tokens=128, seed=11, cache_dir=None)
    text = augmenter.complete("describe a bird")
    assert text == "echo: describe a bird"
    request = _StubHandler.requests_seen[-1]
    assert request == {"prompt": "describe a bird", "max_tokens": 128, "seed": 11}


def test_http_augmenter_retries_on_server_error(stub_server):
    _StubHandler.fail_first = 2
    augmenter = HttpAugmenter(stub_server, retries=3, backoff=0.01, cache_dir=None)
    assert augmenter.complete("x").startswith("echo:")
    assert len(_StubHandler.requests_seen) == 3


def test_http_augmenter_gives_up_after_retries(stub_server):
    _StubHandler.fail_first = 10
    augmenter = HttpAugmenter(stub_server, retries=2, backoff=0.01, cache_dir=None)
    with pytest.raises(BackendError, match="failed after 3 attempts"):
        augmenter.complete("x")


def test_http_augmenter_disk_cache(stub_server, tmp_path):
    augmenter = HttpAugmenter(stub_server, backoff=0.01, cache_dir=str(tmp_path))
    first = augmenter.complete("cached prompt")
    count = len(_StubHandler.requests_seen)
    second = augmenter.complete("cached prompt")
    assert first == second
    assert len(_StubHandler.requests_seen) == count  # served from cache


class _CompletionHandler(_StubHandler):
    """Answers any prompt with one valid variation line."""

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        json.loads(self.rfile.read(length))
        body = json.dumps(
            {"text": "remote keyword: a portrayal from the remote model"}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def test_pipeline_runs_with_real_augmenter_substituted(tmp_path):
    # interfaces are swappable: all-mock except one real (HTTP) backend
    from negmine.backends import mock_backends
    from negmine.core import GenerationConfig
    from negmine.fixtures import make_demo_pairs
    from negmine.generation import run_generation

    server = HTTPServer(("127.0.0.1", 0), _CompletionHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        endpoint = f"http://127.0.0.1:{server.server_port}/complete"
        pairs = make_demo_pairs(tmp_path / "data", n_pairs=3, seed=0)
        backends = mock_backends(dim=32, seed=0)
        backends.augmenter = HttpAugmenter(endpoint, backoff=0.01, cache_dir=None)
        config = GenerationConfig(objects_per_image=2, variations_per_object=2,
                                  seed=5)
        result = run_generation(pairs, config, backends, tmp_path / "out",
                                pairs_root=tmp_path / "data", jobs=2)
        assert result.counters["samples_generated"] > 0
        assert all(s.variation.keyword == "remote keyword"
                   for s in result.samples)
    finally:
        server.shutdown()

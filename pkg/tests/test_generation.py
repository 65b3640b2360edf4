from pathlib import Path

import numpy as np
import pytest

from negmine.backends import (
    BackendError,
    InpainterBackend,
    MockInpainter,
    MockSegmenter,
    MockTagger,
    SegmenterBackend,
    TaggerBackend,
    mock_backends,
)
from negmine.core import (
    ConceptVariation,
    GenerationConfig,
    ObjectTag,
    SegmentMask,
    SourcePair,
    ImageRef,
)
from negmine.fixtures import SCENES
from negmine.generation import (
    CaptionEditError,
    PromptTemplate,
    TemplateError,
    build_prompt,
    decompose_scene,
    edit_caption,
    generate_group,
    parse_variations,
    run_generation,
    sample_objects,
)
from negmine.manifest import load_image
from negmine.seeding import rng_from

DATA_DIR = Path(__file__).parent / "data"


def _pair(caption, generated=None, pair_id="pair-000"):
    return SourcePair(
        id=pair_id,
        image=ImageRef(id=pair_id, path="images/p.png", width=64, height=48),
        caption=caption,
        generated_caption=generated,
    )


SEAGULL_PAIR = _pair(SCENES["seagull_ship"].human_caption,
                     SCENES["seagull_ship"].tagger_caption)


# ---------------------------------------------------------------------------
# decompose_scene

def test_decompose_fixture_scene(seagull_image):
    pair = _pair(SCENES["seagull_ship"].human_caption)
    scene = decompose_scene(pair, seagull_image, MockTagger(), MockSegmenter())
    assert {t.label for t in scene.tags} == {"seagull", "water", "ship", "city"}
    assert set(scene.masks) == {"seagull", "water", "ship", "city"}
    for tag in scene.tags:
        assert scene.masks[tag.label].bitmap.shape == seagull_image.shape[:2]
    assert scene.pair.generated_caption == SCENES["seagull_ship"].tagger_caption
    # every retained tag is editable from the human or the scene caption
    for tag in scene.tags:
        assert (tag.label in scene.pair.caption
                or tag.label in scene.pair.generated_caption)


class _EmptyMaskSegmenter(SegmenterBackend):
    def __init__(self, empty_for):
        self.empty_for = empty_for
        self.inner = MockSegmenter()

    def segment(self, image, tag, image_id):
        if tag.label == self.empty_for:
            bitmap = np.zeros(np.asarray(image).shape[:2], dtype=bool)
            return SegmentMask.from_bitmap(image_id, tag, bitmap)
        return self.inner.segment(image, tag, image_id)


def test_decompose_drops_tag_with_empty_mask(seagull_image):
    scene = decompose_scene(_pair("a seagull"), seagull_image, MockTagger(),
                            _EmptyMaskSegmenter(empty_for="ship"))
    assert {t.label for t in scene.tags} == {"seagull", "water", "city"}
    assert scene.dropped == (("ship", "object tag leads to wrong mask"),)


class _NoTagsTagger(TaggerBackend):
    def tag(self, image):
        return [], "an empty scene"


def test_decompose_zero_tags(seagull_image):
    scene = decompose_scene(_pair("a seagull"), seagull_image,
                            _NoTagsTagger(), MockSegmenter())
    assert scene.tags == ()
    assert scene.masks == {}


# ---------------------------------------------------------------------------
# sample_objects

def test_sample_objects_deterministic():
    tags = [ObjectTag(label=l) for l in ("a", "b", "c", "d")]
    first = sample_objects(tags, 3, seed=42)
    second = sample_objects(tags, 3, seed=42)
    assert first == second
    assert len(first) == 3


def test_sample_objects_clamps():
    tags = [ObjectTag(label="a"), ObjectTag(label="b")]
    assert set(sample_objects(tags, 5, seed=0)) == set(tags)


def test_sample_objects_full_sample_is_whole_set():
    tags = [ObjectTag(label=l) for l in ("a", "b", "c")]
    assert set(sample_objects(tags, 3, seed=123)) == set(tags)


# ---------------------------------------------------------------------------
# build_prompt

def _bread_template():
    return PromptTemplate(
        instruction="You rewrite one object from a scene into a different but "
                    "plausible variation of it.",
        icl_examples=(
            ConceptVariation(object=ObjectTag(label="bread"),
                             portrayal="a freshly baked loaf with a golden crust",
                             keyword="freshly baked loaf"),
        ),
    )


def test_build_prompt_matches_golden():
    prompt = build_prompt(_bread_template(),
                          "a seagull flying over the water near a large ship",
                          ObjectTag(label="water"), k=4, keyword_word_limit=3)
    golden = (DATA_DIR / "prompt_golden.txt").read_text(encoding="utf-8")
    assert prompt == golden
    assert "bread" in prompt and "water" in prompt


def test_build_prompt_k1_requests_one():
    prompt = build_prompt(_bread_template(), "cap", ObjectTag(label="water"), k=1)
    assert "Propose 1 variation," in prompt
    assert "variations" not in prompt.split("Propose 1")[1]


def test_build_prompt_empty_context_omits_section():
    prompt = build_prompt(_bread_template(), "", ObjectTag(label="water"), k=2)
    assert "Context:" not in prompt


def test_template_requires_example_and_slots():
    with pytest.raises(TemplateError, match="example"):
        PromptTemplate(instruction="x", icl_examples=())
    with pytest.raises(TemplateError, match="caption"):
        PromptTemplate(instruction="x",
                       icl_examples=_bread_template().icl_examples,
                       context_slot="Context: (no placeholder)")
    with pytest.raises(TemplateError, match="object"):
        PromptTemplate(instruction="x",
                       icl_examples=_bread_template().icl_examples,
                       query_slot="Object: {object} and {object}")


# ---------------------------------------------------------------------------
# parse_variations

WATER = ObjectTag(label="water")


def test_parse_single_variation_line():
    variations, report = parse_variations(
        "bald eagle: a black and white bald eagle", 4, 3, ObjectTag(label="bird"))
    assert len(variations) == 1
    assert variations[0].keyword == "bald eagle"
    assert variations[0].portrayal == "a black and white bald eagle"
    assert len(report) == 0


def test_parse_water_example():
    response = "mountain lake: a serene mountain lake with crystal clear water"
    variations, _ = parse_variations(response, 4, 3, WATER)
    assert variations[0].keyword == "mountain lake"


def test_parse_truncates_to_k():
    response = "\n".join(f"keyword {i}: portrayal {i}" for i in range(6))
    variations, _ = parse_variations(response, 4, 3, WATER)
    assert [v.keyword for v in variations] == [f"keyword {i}" for i in range(4)]


def test_parse_drops_bad_lines_with_reasons():
    response = "\n".join([
        "Here are some ideas",              # no delimiter
        ": missing keyword",                # empty keyword
        "lonely keyword:",                  # empty portrayal
        "a very long keyword here: fine",   # over the 3-word limit
        "good keyword: a valid portrayal",
    ])
    variations, report = parse_variations(response, 5, 3, WATER)
    assert [v.keyword for v in variations] == ["good keyword"]
    reasons = [reason for _, reason in report.dropped]
    assert reasons == ["no 'keyword: portrayal' delimiter", "empty keyword",
                       "empty portrayal", "keyword exceeds 3 words"]


def test_parse_strips_enumeration_markers():
    response = "1. stormy sea: a stormy sea with whitecapped waves"
    variations, _ = parse_variations(response, 1, 3, WATER)
    assert variations[0].keyword == "stormy sea"


def test_parse_zero_parseable_returns_empty():
    variations, report = parse_variations("no structure at all", 4, 3, WATER)
    assert variations == []
    assert len(report) == 1


def test_parse_never_exceeds_keyword_limit():
    rng = rng_from("parse-prop")
    words = ["alpha", "beta", "gamma", "delta", "epsilon"]
    for trial in range(200):
        n_words = int(rng.integers(1, 6))
        limit = int(rng.integers(1, 4))
        keyword = " ".join(words[:n_words])
        variations, _ = parse_variations(f"{keyword}: some portrayal", 4,
                                         limit, WATER)
        for v in variations:
            assert len(v.keyword.split()) <= limit


# ---------------------------------------------------------------------------
# edit_caption

def test_edit_caption_direct_replacement_matches_worked_example():
    edit = edit_caption(
        SEAGULL_PAIR, ObjectTag(label="seagull"),
        ConceptVariation(object=ObjectTag(label="seagull"),
                         portrayal="a black and white bald eagle",
                         keyword="bald eagle"))
    assert edit.caption == "a bald eagle flying over the water near a large ship"
    assert edit.used_fallback is False
    assert edit.multi_instance is False
    assert edit.restore() == SEAGULL_PAIR.caption


def test_edit_caption_fallback_matches_worked_example():
    edit = edit_caption(
        SEAGULL_PAIR, ObjectTag(label="city"),
        ConceptVariation(object=ObjectTag(label="city"),
                         portrayal="a historic town with cobblestone streets",
                         keyword="historic town"))
    assert edit.caption == ("a seagull in the ocean near a harbor with a ship "
                            "and a historic town in the background")
    assert edit.used_fallback is True
    assert edit.restore() == SEAGULL_PAIR.generated_caption


def test_edit_caption_multi_instance_replaces_first_only():
    pair = _pair("a dog chasing a dog across the park")
    edit = edit_caption(pair, ObjectTag(label="dog"),
                        ConceptVariation(object=ObjectTag(label="dog"),
                                         portrayal="a husky",
                                         keyword="husky"))
    assert edit.caption == "a husky chasing a dog across the park"
    assert edit.multi_instance is True
    assert edit.restore() == pair.caption


def test_edit_caption_whole_word_only():
    pair = _pair("a cityscape at dusk", generated="a city at dusk")
    edit = edit_caption(pair, ObjectTag(label="city"),
                        ConceptVariation(object=ObjectTag(label="city"),
                                         portrayal="p", keyword="village"))
    # 'cityscape' must not match; the generated caption supplies the word
    assert edit.used_fallback is True
    assert edit.caption == "a village at dusk"


def test_edit_caption_case_insensitive_preserves_rest():
    pair = _pair("A Seagull flying HIGH")
    edit = edit_caption(pair, ObjectTag(label="seagull"),
                        ConceptVariation(object=ObjectTag(label="seagull"),
                                         portrayal="p", keyword="bald eagle"))
    assert edit.caption == "A bald eagle flying HIGH"
    assert edit.replaced_text == "Seagull"
    assert edit.restore() == pair.caption


def test_edit_caption_absent_from_both_raises():
    pair = _pair("a boat on a lake", generated="a boat near a dock")
    with pytest.raises(CaptionEditError, match="neither"):
        edit_caption(pair, ObjectTag(label="city"),
                     ConceptVariation(object=ObjectTag(label="city"),
                                      portrayal="p", keyword="village"))


def test_edit_caption_identity_keyword_raises():
    pair = _pair("a bird on a rock")
    with pytest.raises(CaptionEditError, match="unchanged"):
        edit_caption(pair, ObjectTag(label="bird"),
                     ConceptVariation(object=ObjectTag(label="bird"),
                                      portrayal="p", keyword="bird"))


# ---------------------------------------------------------------------------
# generate_group

def _variations(labels, obj):
    return [ConceptVariation(object=obj, portrayal=f"a detailed {kw}", keyword=kw)
            for kw in labels]


def _seagull_mask(image):
    return MockSegmenter().segment(image, ObjectTag(label="seagull"), "pair-000")


def test_generate_group_one_sample_per_variation(tmp_path, seagull_image):
    tag = ObjectTag(label="seagull")
    variations = _variations(
        ["bald eagle", "brown pelican", "white heron", "black cormorant"], tag)
    group, failures = generate_group(
        SEAGULL_PAIR, tag, _seagull_mask(seagull_image), variations,
        MockInpainter(), seed=1, out_dir=tmp_path, source_image=seagull_image)
    assert failures == []
    assert len(group) == 4
    paths = {s.image.path for s in group.samples}
    assert len(paths) == 4
    contents = {(tmp_path / p).read_bytes() for p in paths}
    assert len(contents) == 4  # distinct image files
    for sample, variation in zip(group.samples, variations):
        assert sample.status == "raw"
        assert variation.keyword in sample.caption
        assert sample.mask_coverage_pct == pytest.approx(
            _seagull_mask(seagull_image).coverage_pct)


def test_generate_group_uses_portrayal_for_inpainting(tmp_path, seagull_image):
    tag = ObjectTag(label="seagull")
    variation = ConceptVariation(object=tag, portrayal="a black and white bald eagle",
                                 keyword="bald eagle")
    mask = _seagull_mask(seagull_image)
    group, _ = generate_group(SEAGULL_PAIR, tag, mask, [variation],
                              MockInpainter(), seed=5, out_dir=tmp_path,
                              source_image=seagull_image)
    saved = load_image(tmp_path / group.samples[0].image.path)
    from negmine.seeding import stable_hash
    expected = MockInpainter().inpaint(seagull_image, mask, variation.portrayal,
                                       stable_hash("inpaint-seed", 5, 0))
    assert np.array_equal(saved, expected)
    # keyword, not portrayal, lands in the caption
    assert "bald eagle" in group.samples[0].caption
    assert "black and white" not in group.samples[0].caption


class _FailingInpainter(InpainterBackend):
    def __init__(self, fail_on_portrayal):
        self.fail_on = fail_on_portrayal
        self.inner = MockInpainter()

    def inpaint(self, image, mask, portrayal, seed):
        if self.fail_on in portrayal:
            raise BackendError("synthetic inpainter failure")
        return self.inner.inpaint(image, mask, portrayal, seed)


def test_generate_group_drops_failed_variation_only(tmp_path, seagull_image):
    tag = ObjectTag(label="seagull")
    variations = _variations(["bald eagle", "brown pelican", "white heron"], tag)
    group, failures = generate_group(
        SEAGULL_PAIR, tag, _seagull_mask(seagull_image), variations,
        _FailingInpainter("brown pelican"), seed=1, out_dir=tmp_path,
        source_image=seagull_image)
    assert len(group) == 2
    assert len(failures) == 1 and failures[0][0] == "brown pelican"


def test_generate_group_single_variation(tmp_path, seagull_image):
    tag = ObjectTag(label="seagull")
    group, _ = generate_group(
        SEAGULL_PAIR, tag, _seagull_mask(seagull_image),
        _variations(["bald eagle"], tag), MockInpainter(), seed=1,
        out_dir=tmp_path, source_image=seagull_image)
    assert len(group) == 1


# ---------------------------------------------------------------------------
# run_generation

def test_run_generation_counts_and_caps(tmp_path, demo_dataset, backends):
    root, pairs = demo_dataset
    config = GenerationConfig(objects_per_image=3, variations_per_object=4, seed=7)
    result = run_generation(pairs, config, backends, tmp_path / "out",
                            pairs_root=root, jobs=2)
    assert result.counters["pairs_in"] == 10
    assert result.counters["samples_generated"] <= 10 * 3 * 4
    assert result.counters["samples_generated"] == len(result.samples)
    assert result.counters["groups_generated"] == len(result.groups)
    # fallback path exercised: some tags occur only in the scene caption
    assert any(s.used_fallback for s in result.samples)
    assert all(s.status == "raw" for s in result.samples)


def test_run_generation_single_pair_m1_k1(tmp_path, demo_dataset, backends):
    root, pairs = demo_dataset
    config = GenerationConfig(objects_per_image=1, variations_per_object=1, seed=3)
    result = run_generation(pairs[:1], config, backends, tmp_path / "out",
                            pairs_root=root)
    assert result.counters["samples_generated"] <= 1


def test_run_generation_bitwise_deterministic(tmp_path, demo_dataset):
    root, pairs = demo_dataset
    config = GenerationConfig(objects_per_image=3, variations_per_object=4, seed=7)
    outputs = []
    for run, jobs in (("a", 4), ("b", 1)):
        out = tmp_path / run
        result = run_generation(pairs, config, mock_backends(dim=64, seed=0),
                                out, pairs_root=root, jobs=jobs)
        listing = {}
        for path in sorted(out.rglob("*.png")):
            listing[str(path.relative_to(out))] = path.read_bytes()
        ids = [s.id for s in result.samples]
        outputs.append((ids, listing, result.counters))
    assert outputs[0] == outputs[1]


def test_run_generation_sample_round_trip_restores_caption(tmp_path, demo_dataset,
                                                           backends):
    root, pairs = demo_dataset
    config = GenerationConfig(objects_per_image=2, variations_per_object=2, seed=11)
    result = run_generation(pairs, config, backends, tmp_path / "out",
                            pairs_root=root)
    for sample in result.samples:
        # whole-word replacement preserved everything else verbatim
        assert sample.variation.keyword in sample.caption
        if not sample.used_fallback:
            restored = sample.caption.replace(sample.variation.keyword,
                                              sample.tag.label, 1)
            assert restored.lower() == sample.source_caption.lower()

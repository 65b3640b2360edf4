import itertools
import json

import numpy as np
import pytest

from negmine.backends import MockMatcher
from negmine.evaluation import (
    DimensionError,
    EvalGroup,
    EvalMember,
    RetrievalInstance,
    evaluate_testset,
    group_scores,
    load_embeddings_file,
    load_eval_groups,
    load_retrieval_jsonl,
    load_winoground_jsonl,
    macro_average,
    pair_scores,
    rank_candidates,
    retrieval_hits_at_k,
)
from negmine.fixtures import fixture_image
from negmine.seeding import rng_from


# ---------------------------------------------------------------------------
# pair_scores

def test_pair_scores_all_correct():
    assert pair_scores([[0.9, 0.2], [0.3, 0.8]]) == (1, 1, 1)


def test_pair_scores_tie_fails_text():
    text, image, group = pair_scores([[0.5, 0.2], [0.5, 0.8]])
    assert text == 0
    assert group == 0


def test_pair_scores_inverted():
    assert pair_scores([[0.5, 0.9], [0.8, 0.4]]) == (0, 0, 0)


def test_pair_scores_wrong_shape():
    with pytest.raises(DimensionError):
        pair_scores(np.ones((3, 3)))


def _oracle_pair(s):
    # independent literal transcription of the comparison rules
    text = int(s[0][0] > s[1][0] and s[1][1] > s[0][1])
    image = int(s[0][0] > s[0][1] and s[1][1] > s[1][0])
    return text, image, int(text and image)


def test_pair_scores_truth_table_exhaustive():
    # every strict ordering of four distinct values in the 2x2 grid
    for values in itertools.permutations((1.0, 2.0, 3.0, 4.0)):
        s = [[values[0], values[1]], [values[2], values[3]]]
        assert pair_scores(s) == _oracle_pair(s)


def test_pair_scores_transpose_swaps_text_and_image():
    rng = rng_from("transpose")
    for _ in range(200):
        s = rng.normal(size=(2, 2))
        text, image, group = pair_scores(s)
        t_text, t_image, t_group = pair_scores(s.T)
        assert (text, image, group) == (t_image, t_text, t_group)


# ---------------------------------------------------------------------------
# group_scores

def test_group_scores_diagonal_dominant_all_one():
    s = np.full((3, 3), 0.1)
    np.fill_diagonal(s, 0.9)
    scores = group_scores(s)
    assert (scores.text_all, scores.image_all, scores.group_all) == (1, 1, 1)
    assert (scores.text_1, scores.image_1, scores.group_1) == (1.0, 1.0, 1.0)


def test_group_scores_k2_equivalence_with_pair_scores():
    # DERIVED: for k=2, all-members scores coincide with the pairwise scores
    rng = rng_from("k2-equiv")
    for _ in range(500):
        s = rng.normal(size=(2, 2))
        text, image, group = pair_scores(s)
        scores = group_scores(s)
        assert scores.text_all == text
        assert scores.image_all == image
        assert scores.group_all == group


def test_group_scores_one_misranked_member():
    k = 4
    s = np.full((k, k), 0.1)
    np.fill_diagonal(s, 0.9)
    s[2, 3] = 0.95  # caption 2 beats caption 3 on image 3 -> text miss at 3
    scores = group_scores(s)
    assert scores.text_all == 0
    assert scores.text_1 == 0.75
    # rows still diagonal-dominant except row 2 (image 3 now wins caption 2)
    assert scores.image_1 == 0.75


def test_group_all_bounded_by_text_and_image_all():
    rng = rng_from("bound")
    for _ in range(300):
        k = int(rng.integers(2, 7))
        scores = group_scores(rng.normal(size=(k, k)))
        assert scores.group_all <= min(scores.text_all, scores.image_all)
        assert scores.group_1 <= min(scores.text_1, scores.image_1)


def test_scores_invariant_under_monotone_transform():
    rng = rng_from("monotone")
    for _ in range(100):
        k = int(rng.integers(2, 7))
        cos = rng.uniform(-1, 1, size=(k, k))
        tau = float(rng.uniform(0.05, 3.0))
        raw = group_scores(cos)
        transformed = group_scores(np.exp(cos / tau))
        assert raw == transformed


def test_scores_invariant_under_joint_member_permutation():
    rng = rng_from("joint-perm")
    for _ in range(100):
        k = int(rng.integers(2, 6))
        s = rng.normal(size=(k, k))
        perm = rng.permutation(k)
        base = group_scores(s)
        shuffled = group_scores(s[np.ix_(perm, perm)])
        assert base == shuffled


def test_group_scores_ties_fail():
    s = np.array([[0.5, 0.5], [0.1, 0.6]])  # caption 0 ties itself on image 0? no:
    # s[0,0] == s[0,1): image direction tie for caption 0
    scores = group_scores(s)
    assert scores.image_1 == 0.5


# ---------------------------------------------------------------------------
# evaluate_testset

def _fixture_groups(matcher, n_groups=3, k=3):
    groups = []
    for g in range(n_groups):
        members = []
        for j in range(k):
            concept = f"concept-{g}-{j}"
            caption = f"a photo of {concept}"
            image = fixture_image(f"eval-{g}-{j}")
            matcher.register_pair(image, caption, concept)
            members.append(EvalMember(caption=caption, image=image))
        groups.append(EvalGroup(members=tuple(members)))
    return groups


def test_evaluate_testset_perfect_fixtures_score_100():
    matcher = MockMatcher(dim=64, seed=0)
    groups = _fixture_groups(matcher)
    report = evaluate_testset(groups, matcher=matcher)
    assert report["groups"] == 3
    assert report["excluded"] == 0
    for name, value in report["metrics"].items():
        assert value == 100.0, name
    assert set(report["metrics"]) == {"Text All", "Image All", "Group All",
                                      "Text 1", "Image 1", "Group 1"}


def test_evaluate_testset_excludes_failing_groups():
    matcher = MockMatcher(dim=64, seed=0)
    groups = _fixture_groups(matcher, n_groups=2)
    broken = EvalGroup(members=(
        EvalMember(caption="a", image="missing/not-there.png"),
        EvalMember(caption="b", image="missing/also-gone.png"),
    ))
    report = evaluate_testset(groups + [broken], matcher=matcher,
                              groups_path="groups.jsonl")
    assert report["groups"] == 2
    assert report["excluded"] == 1


def test_evaluate_testset_random_embeddings_chance_level():
    # Monte-Carlo oracle: two independent strict comparisons at chance -> 25%
    rng = rng_from("mc-text-all")
    n, d = 20000, 32
    texts = rng.normal(size=(n, 2, d))
    images = rng.normal(size=(n, 2, d))
    texts /= np.linalg.norm(texts, axis=2, keepdims=True)
    images /= np.linalg.norm(images, axis=2, keepdims=True)
    sims = np.einsum("gtd,gid->gti", texts, images)
    text_all = np.mean((sims[:, 0, 0] > sims[:, 1, 0])
                       & (sims[:, 1, 1] > sims[:, 0, 1]))
    assert abs(text_all - 0.25) <= 0.03


def test_group_similarity_from_embeddings():
    groups = [EvalGroup(members=(
        EvalMember(caption="c0", image=None, caption_id="c0", image_id="i0"),
        EvalMember(caption="c1", image=None, caption_id="c1", image_id="i1"),
    ))]
    embeddings = {
        "c0": np.array([1.0, 0.0]), "i0": np.array([1.0, 0.1]),
        "c1": np.array([0.0, 1.0]), "i1": np.array([0.1, 1.0]),
    }
    report = evaluate_testset(groups, embeddings=embeddings)
    assert report["metrics"]["Group All"] == 100.0


def test_eval_group_invariants():
    with pytest.raises(ValueError, match="k >= 2"):
        EvalGroup(members=(EvalMember(caption="a", image="x.png"),))
    with pytest.raises(ValueError, match="captions"):
        EvalGroup(members=(EvalMember(caption="a", image="x.png"),
                           EvalMember(caption="a", image="y.png")))
    with pytest.raises(ValueError, match="images"):
        EvalGroup(members=(EvalMember(caption="a", image="x.png"),
                           EvalMember(caption="b", image="x.png")))


# ---------------------------------------------------------------------------
# retrieval

def test_hits_at_1_strict_max():
    queries = np.array([[1.0, 0.0]])
    candidates = np.array([[1.0, 0.05], [0.0, 1.0], [-1.0, 0.0]])
    assert retrieval_hits_at_k(queries, candidates, [0], k=1) == 1.0


def test_hits_ranked_second():
    queries = np.array([[1.0, 0.0]])
    candidates = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.0],
                           [0.5, 0.5]])
    # true candidate is index 1, beaten only by index 0
    assert retrieval_hits_at_k(queries, candidates, [1], k=1) == 0.0
    assert retrieval_hits_at_k(queries, candidates, [1], k=2) == 1.0


def test_hits_tie_straddling_k_is_miss():
    queries = np.array([[1.0, 0.0]])
    # candidates 0 and 1 tie exactly; k=1 cannot hold the tie group
    candidates = np.array([[2.0, 0.0], [4.0, 0.0], [0.0, 1.0]])
    assert retrieval_hits_at_k(queries, candidates, [0], k=1) == 0.0
    assert retrieval_hits_at_k(queries, candidates, [0], k=2) == 1.0


def test_hits_matches_sort_oracle():
    rng = rng_from("hits-oracle")
    for _ in range(50):
        q, c, d = int(rng.integers(1, 8)), int(rng.integers(2, 12)), 6
        queries = rng.normal(size=(q, d))
        candidates = rng.normal(size=(c, d))
        truth = [int(rng.integers(0, c)) for _ in range(q)]
        k = int(rng.integers(1, c + 1))
        got = retrieval_hits_at_k(queries, candidates, truth, k)
        # oracle: full stable sort of cosines (ties are measure-zero here)
        qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
        cn = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
        expected = np.mean([
            rank_candidates(qn[i] @ cn.T).index(truth[i]) < k
            for i in range(q)])
        assert got == pytest.approx(expected)


def test_hits_validates_ground_truth():
    with pytest.raises(ValueError, match="out of range"):
        retrieval_hits_at_k(np.ones((1, 2)), np.ones((3, 2)), [5], k=1)


# ---------------------------------------------------------------------------
# macro average

def test_macro_average_single():
    assert macro_average([0.8]) == pytest.approx(0.8)


def test_macro_average_two():
    assert macro_average({"a": 1.0, "b": 0.0}) == pytest.approx(0.5)


def test_macro_average_empty_rejected():
    with pytest.raises(ValueError):
        macro_average([])


def test_macro_average_published_object_rows():
    baseline = [86.95, 77.75, 72.75, 85.5, 80.5, 70.6]
    ours = [92.04, 84.97, 77.52, 92.01, 85.95, 77.99]
    assert macro_average(baseline) == pytest.approx(79.00, abs=0.01)
    assert macro_average(ours) == pytest.approx(85.08, abs=0.01)


# ---------------------------------------------------------------------------
# adapters

def test_load_eval_groups_and_embeddings(tmp_path):
    groups_path = tmp_path / "groups.jsonl"
    records = [
        {"members": [
            {"caption": "c0", "image": "im0.png", "caption_id": "c0",
             "image_id": "i0"},
            {"caption": "c1", "image": "im1.png", "caption_id": "c1",
             "image_id": "i1"},
        ]},
    ]
    groups_path.write_text("\n".join(json.dumps(r) for r in records))
    groups = load_eval_groups(groups_path)
    assert len(groups) == 1 and groups[0].k == 2

    emb_path = tmp_path / "emb.jsonl"
    emb_path.write_text("\n".join(
        json.dumps({"id": i, "embedding": [1.0, float(n)]})
        for n, i in enumerate(["c0", "i0", "c1", "i1"])))
    embeddings = load_embeddings_file(emb_path)
    assert set(embeddings) == {"c0", "i0", "c1", "i1"}
    assert embeddings["c1"].tolist() == [1.0, 2.0]


def test_load_winoground_layout(tmp_path):
    path = tmp_path / "wino.jsonl"
    path.write_text(json.dumps({
        "id": 7, "caption_0": "an old person kisses a young person",
        "caption_1": "a young person kisses an old person",
        "image_0": "ex_7_img_0.png", "image_1": "ex_7_img_1.png"}) + "\n")
    groups = load_winoground_jsonl(path)
    assert groups[0].k == 2
    assert groups[0].members[1].caption_id == "7:c1"


def test_load_retrieval_layout(tmp_path):
    path = tmp_path / "retr.jsonl"
    path.write_text(json.dumps({
        "image": "img.png",
        "candidates": ["a white cat", "cat a white"],
        "true_index": 0,
        "category": "order"}) + "\n")
    instances = load_retrieval_jsonl(path)
    assert instances[0].category == "order"
    with pytest.raises(ValueError, match="out of range"):
        RetrievalInstance(image="x", candidates=("a",), true_index=3)

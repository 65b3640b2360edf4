import pytest

from negmine.backends import mock_backends
from negmine.core import (
    ConceptVariation,
    FilterScores,
    GeneratedSample,
    ImageRef,
    ObjectTag,
)
from negmine.fixtures import fixture_image, make_demo_pairs


@pytest.fixture
def backends():
    return mock_backends(dim=64, seed=0)


@pytest.fixture
def seagull_image():
    return fixture_image("seagull_ship")


@pytest.fixture
def demo_dataset(tmp_path):
    """Small pairs manifest + images on disk; returns (root dir, pairs)."""
    root = tmp_path / "dataset"
    pairs = make_demo_pairs(root, n_pairs=10, seed=0)
    return root, pairs


def make_sample(index: int = 0, **overrides) -> GeneratedSample:
    """Convenience builder for manifest-level tests."""
    tag = overrides.pop("tag", ObjectTag(label="seagull"))
    fields = dict(
        id=f"pair-000--seagull--v{index}",
        source_pair_id="pair-000",
        tag=tag,
        variation=ConceptVariation(object=tag,
                                   portrayal="a black and white bald eagle",
                                   keyword="bald eagle"),
        image=ImageRef(id=f"img-{index}", path=f"images/sample-{index}.png",
                       width=64, height=48),
        caption="a bald eagle flying over the water near a large ship",
        source_caption="a seagull flying over the water near a large ship",
        mask_path="masks/pair-000--seagull.png",
        mask_coverage_pct=12.5,
    )
    fields.update(overrides)
    return GeneratedSample(**fields)


def make_scores(itm_variation=1.0, itm_original=0.5, area=25.0, delta=3.0,
                passed=True) -> FilterScores:
    return FilterScores(itm_variation=itm_variation, itm_original=itm_original,
                        area_score_pct=area, delta_in_mask=delta, passed=passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in str(getattr(report, "nodeid", "")):
                name = report.nodeid.split("::")[-1]
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append(f"[{status}] {name}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def fig1_tree():
    return {"id": "Total", "children": [
        {"id": "A", "children": [{"id": "AA"}, {"id": "AB"}]},
        {"id": "B", "children": [{"id": "BA"}, {"id": "BB"}, {"id": "BC"}]},
    ]}


@pytest.fixture
def three_node():
    return {"id": "T", "children": [{"id": "L1"}, {"id": "L2"}]}


SMALL_TOML = """\
seed = 3
candidates = [1, 12]
splits = [{name = "2014-12", train_end = "2014-12", horizon = 12}]

[paths]
hierarchy = "hierarchy.json"
panel = "panel.csv"
output = "out"
"""


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 7-series panel (tree 2x2, six years) with every anomaly kind, plus a
    TOML config with one split."""
    from htsrecon.datagen import GenConfig, generate_hierarchical_sales, write_dataset

    root = tmp_path_factory.mktemp("small")
    cfg = GenConfig(tree=[2, 2], years=6, seed=3, outlier_rate=0.01, negative_rate=0.01,
                    late_start_prob=0.3)
    write_dataset(root, *generate_hierarchical_sales(cfg))
    (root / "config.toml").write_text(SMALL_TOML)
    return root


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

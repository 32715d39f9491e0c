import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_tree
from htsrecon.hierarchy import (Hierarchy, Panel, StructureError, aggregate_bottom,
                                build_summing_matrix, check_coherence, load_hierarchy,
                                save_hierarchy)
from htsrecon.datagen import DEFAULT_TREE

FIG1_S = np.array([
    [1, 1, 1, 1, 1],
    [1, 1, 0, 0, 0],
    [0, 0, 1, 1, 1],
    [1, 0, 0, 0, 0],
    [0, 1, 0, 0, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 0, 1, 0],
    [0, 0, 0, 0, 1],
], dtype=float)


def test_fig1_summing_matrix(fig1_tree):
    h = Hierarchy.from_tree(fig1_tree)
    s = build_summing_matrix(h)
    assert h.nodes == ("Total", "A", "B", "AA", "AB", "BA", "BB", "BC")
    assert s.row_labels == h.nodes
    assert s.col_labels == ("AA", "AB", "BA", "BB", "BC")
    np.testing.assert_array_equal(np.asarray(s), FIG1_S)


def test_single_leaf_matrix():
    s = build_summing_matrix(Hierarchy.from_tree({"id": "T", "children": [{"id": "x"}]}))
    np.testing.assert_array_equal(np.asarray(s), [[1.0], [1.0]])


def test_default_tree_shape():
    h = Hierarchy.from_tree(DEFAULT_TREE)
    s = np.asarray(build_summing_matrix(h))
    assert s.shape == (30, 16)
    assert [len(h.level_nodes(k)) for k in range(h.levels)] == [1, 3, 10, 16]


def test_aggregate_examples(fig1_tree):
    s = build_summing_matrix(Hierarchy.from_tree(fig1_tree))
    np.testing.assert_array_equal(aggregate_bottom(s, [1, 2, 3, 4, 5]),
                                  [15, 3, 12, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(aggregate_bottom(s, np.zeros(5)), np.zeros(8))
    single = build_summing_matrix(Hierarchy.from_tree({"id": "T", "children": [{"id": "x"}]}))
    np.testing.assert_array_equal(aggregate_bottom(single, [7.0]), [7.0, 7.0])
    with pytest.raises(ValueError):
        aggregate_bottom(s, [1, 2, 3])


def test_coherence_examples(fig1_tree):
    s = build_summing_matrix(Hierarchy.from_tree(fig1_tree))
    y = aggregate_bottom(s, [1, 2, 3, 4, 5])
    res = check_coherence(s, y)
    assert res.coherent and res.max_violation == 0.0
    bumped = y.copy()
    bumped[0] += 1.0
    res = check_coherence(s, bumped, tol=1e-9)
    assert not res.coherent
    assert res.max_violation == pytest.approx(1.0)
    assert res.node == "Total"
    tiny = y.copy()
    tiny[0] += 1e-12
    assert check_coherence(s, tiny, tol=1e-9).coherent
    with pytest.raises(ValueError):
        check_coherence(s, y, tol=-1.0)


def test_coherence_skips_absent_leaves(fig1_tree):
    s = build_summing_matrix(Hierarchy.from_tree(fig1_tree))
    y = aggregate_bottom(s, [1, 2, 3, 4, 5])
    y[3] = np.nan
    # Total and A depend on the absent leaf and are not judged
    y[0] += 100.0
    assert check_coherence(s, y).coherent
    y[2] += 1.0
    assert not check_coherence(s, y).coherent


def test_structure_errors():
    with pytest.raises(StructureError) as err:
        Hierarchy.from_parent_map({"a": "b", "b": "a"})
    assert err.value.node in {"a", "b"}
    with pytest.raises(StructureError) as err:
        Hierarchy.from_parent_map({"a": "r", "b": "r", "c": "d"}, roots=["r"])
    assert err.value.node == "d"
    with pytest.raises(StructureError) as err:
        Hierarchy.from_tree({"id": "r", "children": [{"id": "a"}, {"id": "a"}]})
    assert err.value.node == "a"
    # a leaf above the bottom level makes S columns sum to different values
    with pytest.raises(StructureError) as err:
        Hierarchy.from_tree({"id": "r", "children": [
            {"id": "a"}, {"id": "b", "children": [{"id": "c"}]}]})
    assert err.value.node == "a"


def test_parent_map_matches_tree(fig1_tree):
    h1 = Hierarchy.from_tree(fig1_tree)
    parent = {n: h1.parent[n] for n in h1.nodes[1:]}
    h2 = Hierarchy.from_parent_map(parent)
    assert h2.nodes == h1.nodes
    assert h2.bottom_ids == h1.bottom_ids


def test_json_roundtrip(tmp_path, fig1_tree):
    h = Hierarchy.from_tree(fig1_tree)
    save_hierarchy(h, tmp_path / "h.json")
    assert json.loads((tmp_path / "h.json").read_text()) == fig1_tree
    assert load_hierarchy(tmp_path / "h.json") == h


def test_panel_offsets():
    vals = np.array([[1.0, 2.0, 3.0], [np.nan, 5.0, 6.0]])
    p = Panel(vals, np.arange(np.datetime64("2020-01"), np.datetime64("2020-04")), ("a", "b"))
    assert p.start_offsets == (0, 1)
    np.testing.assert_array_equal(p.observed(1), [5.0, 6.0])
    assert p.month_index("2020-03") == 2
    with pytest.raises(ValueError):
        p.month_index("2021-01")
    with pytest.raises(ValueError):
        Panel(vals, np.array(["2020-01", "2020-03", "2020-04"], dtype="datetime64[M]"), ("a", "b"))


@given(st.integers(0, 2**32 - 1))
def test_matrix_invariants(seed):
    rng = np.random.default_rng(seed)
    h = Hierarchy.from_tree(random_tree(rng))
    s = np.asarray(build_summing_matrix(h))
    mk = h.m_bottom
    np.testing.assert_array_equal(s[-mk:], np.eye(mk))
    np.testing.assert_array_equal(s.sum(axis=0), np.full(mk, h.levels))
    for i, node in enumerate(h.nodes):
        leaves = set(h.leaves_under(node))
        assert {h.bottom_ids[j] for j in np.flatnonzero(s[i])} == leaves
    # bottom-up projection identity
    g_bu = np.hstack([np.zeros((mk, h.m - mk)), np.eye(mk)])
    np.testing.assert_array_equal(s @ g_bu @ s, s)


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_aggregate_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    s = build_summing_matrix(Hierarchy.from_tree(random_tree(rng)))
    x, y = rng.normal(size=(2, s.m_bottom))
    lhs = aggregate_bottom(s, a * x + b * y)
    rhs = a * aggregate_bottom(s, x) + b * aggregate_bottom(s, y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    assert check_coherence(s, lhs, tol=1e-9, rtol=1e-12).coherent

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from helpers import friedman_exact_oracle, wilcoxon_exact_oracle
from htsrecon.stats import (ScoreMatrix, dunn_test_holm, friedman_test, holm_adjust,
                            wilcoxon_signed_rank)


# -------------------------------------------------------------- Friedman

def test_friedman_identical_columns():
    x = np.tile(np.arange(5.0)[:, None], (1, 3))
    res = friedman_test(x)
    assert res.statistic == 0.0 and res.pvalue == 1.0


def test_friedman_dominant_column():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 3))
    x[:, 0] = x.min(axis=1) - 1.0
    assert friedman_test(x).pvalue < 0.01


@pytest.mark.parametrize("seed,n,k,ties", [(0, 4, 3, False), (1, 5, 3, True), (2, 8, 2, False),
                                         (3, 3, 4, True), (4, 6, 3, False), (5, 8, 2, True)])
def test_friedman_matches_exact_enumeration(seed, n, k, ties):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, (n, k)).astype(float) if ties else rng.normal(size=(n, k))
    stat, p = friedman_exact_oracle(x)
    res = friedman_test(x, method="exact")
    assert res.statistic == pytest.approx(stat, abs=1e-10)
    assert res.pvalue == pytest.approx(p, abs=1e-10)


def test_friedman_asymptotic_matches_scipy():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(15, 4))
    x[:, 1] += 0.5
    ref = sps.friedmanchisquare(*x.T)
    res = friedman_test(x)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert res.pvalue == pytest.approx(ref.pvalue, rel=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_friedman_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 5.0, (12, 4))
    a = friedman_test(x)
    b = friedman_test(np.exp(3 * x) + 7.0)
    assert a.statistic == b.statistic and a.pvalue == b.pvalue
    assert 0.0 < a.pvalue <= 1.0


def test_friedman_type_one_error():
    rng = np.random.default_rng(0)
    rate = np.mean([friedman_test(rng.normal(size=(20, 3))).pvalue < 0.05 for _ in range(1000)])
    assert 0.04 <= rate <= 0.06


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        ScoreMatrix(np.ones((1, 3)), ("a", "b", "c"))
    with pytest.raises(ValueError):
        ScoreMatrix(np.ones((3, 1)), ("a",))
    with pytest.raises(ValueError):
        ScoreMatrix(np.array([[1.0, np.nan], [1.0, 2.0]]), ("a", "b"))
    with pytest.raises(ValueError):
        friedman_test(np.ones((3, 3)), method="bogus")


# ------------------------------------------------------------ Dunn/Holm

def test_holm_hand_example():
    np.testing.assert_allclose(holm_adjust([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06])
    np.testing.assert_allclose(holm_adjust([0.5, 0.9]), [1.0, 1.0])


@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=12))
def test_holm_properties(p):
    p = np.array(p)
    adj = holm_adjust(p)
    assert np.all(adj >= p - 1e-15) and np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)


def test_dunn_examples():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 3))
    x[:, 2] = x[:, 0]
    sm = ScoreMatrix(x, ("ctrl", "b", "twin"))
    res = dunn_test_holm(sm, "ctrl")
    assert res.columns == ("b", "twin")
    assert res.as_dict()["twin"] == 1.0
    assert np.all(res.adjusted >= res.pvalues)
    two = dunn_test_holm(ScoreMatrix(x[:, :2], ("ctrl", "b")), "ctrl")
    np.testing.assert_array_equal(two.adjusted, two.pvalues)
    with pytest.raises(KeyError):
        dunn_test_holm(sm, "missing")


def test_dunn_z_by_hand():
    # ranks per row are [1, 2, 3]: mean ranks differ by 1 and 2, se = sqrt(12 / (6 * 4))
    x = np.tile([1.0, 2.0, 3.0], (4, 1))
    res = dunn_test_holm(ScoreMatrix(x, ("a", "b", "c")), "a")
    se = np.sqrt(3 * 4 / (6.0 * 4))
    np.testing.assert_allclose(res.z, [1 / se, 2 / se])
    np.testing.assert_allclose(res.pvalues, 2 * sps.norm.sf([1 / se, 2 / se]))


# -------------------------------------------------------------- Wilcoxon

def test_wilcoxon_all_positive():
    before = np.zeros(6)
    after = np.arange(1.0, 7.0)
    assert wilcoxon_signed_rank(before, after, alternative="greater").pvalue == 1 / 64
    res = wilcoxon_signed_rank(before, after)
    assert res.pvalue == 1 / 32 and res.statistic == 0.0


def test_wilcoxon_errors():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1.0], [2.0], corrections=0)


@pytest.mark.parametrize("seed", range(8))
def test_wilcoxon_matches_exact_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 3 + seed % 6
    d = rng.integers(-4, 5, n).astype(float) if seed % 2 else rng.normal(0.3, 1.0, n)
    if not np.any(d != 0):
        d[0] = 1.0
    ge, le = wilcoxon_exact_oracle(d)
    x = np.zeros(n)
    assert wilcoxon_signed_rank(x, d, alternative="greater").pvalue == pytest.approx(ge, abs=1e-10)
    assert wilcoxon_signed_rank(x, d, alternative="less").pvalue == pytest.approx(le, abs=1e-10)
    two = min(1.0, 2 * min(ge, le))
    assert wilcoxon_signed_rank(x, d).pvalue == pytest.approx(two, abs=1e-10)
    assert wilcoxon_signed_rank(x, d, corrections=3).pvalue == pytest.approx(min(1.0, 3 * two),
                                                                             abs=1e-10)


def test_wilcoxon_exact_matches_scipy_without_ties():
    rng = np.random.default_rng(5)
    d = rng.normal(0.4, 1.0, 15)
    ref = sps.wilcoxon(d, method="exact")
    res = wilcoxon_signed_rank(np.zeros(15), d)
    assert res.statistic == ref.statistic
    assert res.pvalue == pytest.approx(ref.pvalue, rel=1e-12)


def test_wilcoxon_normal_matches_scipy():
    rng = np.random.default_rng(6)
    d = np.round(rng.normal(0.3, 1.0, 60), 1)
    d = d[d != 0]
    ref = sps.wilcoxon(d, method="approx", correction=True)
    res = wilcoxon_signed_rank(np.zeros(len(d)), d)
    assert res.pvalue == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_type_one_error():
    rng = np.random.default_rng(0)
    rate = np.mean([wilcoxon_signed_rank(np.zeros(40), rng.normal(size=40)).pvalue < 0.05
                    for _ in range(2000)])
    assert 0.03 <= rate <= 0.07

"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed as it runs and repeated in the pytest terminal summary.

Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.signal import lfilter

sys.path.insert(0, str(Path(__file__).parent))

from helpers import (friedman_exact_oracle, projected_gradient_qp, random_spd, random_tree,
                     record, wilcoxon_exact_oracle)
from htsrecon import pipeline as pl
from htsrecon.datagen import GenConfig, generate_hierarchical_sales
from htsrecon.forecast import SarimaOrder, auto_sarima, fit_sarima, rolling_origin_splits
from htsrecon.hierarchy import Hierarchy, aggregate_bottom, build_summing_matrix
from htsrecon.io import load_json
from htsrecon.metrics import rmsse, sfb, smape
from htsrecon.reconcile import (METHODS, coherent_error_covariance, g_bottom_up, g_gls, g_ols,
                                kkt_residual, qp_objective, reconcile_all, reconcile_forecasts,
                                solve_nonneg_qp, weight_matrix)
from htsrecon.stats import friedman_test, wilcoxon_signed_rank

UNBIASED = ("BU", "OLS", "WLSV", "WLSS", "MINT")


def smat_of(tree) -> np.ndarray:
    return np.asarray(build_summing_matrix(Hierarchy.from_tree(tree)))


@pytest.fixture(scope="module")
def hierarchy_suite():
    """50 random hierarchies (at most 4 levels, 40 leaves) with base forecasts,
    residuals and history, reconciled by every method."""
    rng = np.random.default_rng(2024)
    out = []
    t0 = time.perf_counter()
    for _ in range(50):
        s = smat_of(random_tree(rng, max_depth=3, max_leaves=40))
        m, mk = s.shape
        hist = aggregate_bottom(s, rng.uniform(1.0, 50.0, (mk, 48)))
        resid = rng.normal(size=(m, 48)) * rng.uniform(0.5, 5.0, (m, 1))
        base = aggregate_bottom(s, rng.uniform(1.0, 50.0, (mk, 12))) + rng.normal(0, 5, (m, 12))
        fs = reconcile_all(s, base, METHODS, residuals=resid, history=hist)
        out.append((s, fs))
    return out, time.perf_counter() - t0


def test_c01_coherence(hierarchy_suite):
    suite, elapsed = hierarchy_suite
    worst = 0.0
    for s, fs in suite:
        mk = s.shape[1]
        for name in METHODS[1:]:
            y = fs.reconciled[name]
            rel = np.abs(y - s @ y[-mk:]) / np.maximum(np.abs(y), 1.0)
            worst = max(worst, float(rel.max()))
    ok = worst <= 1e-6 and elapsed < 10.0
    record(1, "coherence suite", ok, f"50 hierarchies x {len(METHODS) - 1} methods, worst "
           f"relative violation {worst:.1e} (<= 1e-6), {elapsed:.2f} s (< 10 s)")
    assert ok


def test_c02_unbiasedness(hierarchy_suite):
    suite, _ = hierarchy_suite
    worst = 0.0
    td_fail = td_total = 0
    for s, fs in suite:
        for name in UNBIASED:
            g = np.asarray(fs.g[name])
            worst = max(worst, float(np.abs(s @ g @ s - s).max()))
        if s.shape[1] > 1:
            td_total += 1
            g = np.asarray(fs.g["TD"])
            td_fail += np.abs(s @ g @ s - s).max() > 1e-8
    ok = worst <= 1e-8 and td_fail == td_total > 0
    record(2, "SGS = S constraint", ok, f"max |SGS - S| {worst:.1e} for BU/OLS/WLSV/WLSS/MinT "
           f"(<= 1e-8); TD violates it on {td_fail}/{td_total} multi-leaf hierarchies")
    assert ok


def test_c03_ols_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        s = smat_of(random_tree(rng))
        diff = np.asarray(g_gls(s, np.eye(s.shape[0]))) - np.asarray(g_ols(s))
        worst = max(worst, float(np.abs(diff).max()))
    ok = worst <= 1e-10
    record(3, "OLS/MinT identity", ok, f"max |G_GLS(W=I) - G_OLS| {worst:.1e} over 20 "
           "hierarchies (<= 1e-10)")
    assert ok


def test_c04_mint_optimality():
    rng = np.random.default_rng(4)
    worst = -np.inf
    for _ in range(20):
        s = smat_of(random_tree(rng, max_leaves=30))
        w = random_spd(rng, s.shape[0], cond=100.0)
        t_mint = np.trace(coherent_error_covariance(s, g_gls(s, w), w))
        for g in (g_bottom_up(s), g_ols(s), g_gls(s, weight_matrix("WLSS", s))):
            worst = max(worst, t_mint - np.trace(coherent_error_covariance(s, g, w)))
    ok = worst <= 1e-9
    record(4, "MinT optimality", ok, f"max trace(V_MinT) - trace(V_other) = {worst:.2e} over "
           "20 SPD W vs BU/OLS/WLSS (<= 1e-9)")
    assert ok


def test_c05_nonnegative_qp():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst_kkt = worst_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 31))
        q = random_spd(rng, n, cond=100.0)
        c = rng.normal(size=n)
        b = solve_nonneg_qp(q, c)
        ref = projected_gradient_qp(q, c, tol=1e-12)
        worst_kkt = max(worst_kkt, kkt_residual(q, c, b))
        worst_gap = max(worst_gap, abs(qp_objective(q, c, b) - qp_objective(q, c, ref)))
    elapsed = time.perf_counter() - t0
    ok = worst_kkt <= 1e-8 and worst_gap <= 1e-8 and elapsed < 30.0
    record(5, "NN-QP correctness", ok, f"100 QPs: max KKT residual {worst_kkt:.1e}, max "
           f"objective gap to projected gradient {worst_gap:.1e} (both <= 1e-8), "
           f"{elapsed:.1f} s (< 30 s)")
    assert ok


def test_c06_hand_example():
    s = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    out = reconcile_forecasts(s, g_gls(s, np.eye(3)), np.array([10.0, 4.0, 5.0]))
    err = float(np.abs(out - np.array([29.0, 13.0, 16.0]) / 3).max())
    ok = err <= 1e-12
    record(6, "hand-derived reconciliation", ok,
           f"[10, 4, 5] -> {np.round(out, 6).tolist()}, max error {err:.1e} (<= 1e-12)")
    assert ok


def _seasonal_ar_sample(seed: int, n: int = 240) -> np.ndarray:
    # (1 - 0.5B)(1 - 0.6B^12)(1 - B^12) y_t = e_t
    e = np.random.default_rng(seed).normal(size=n + 120)
    ar = np.convolve([1.0, -0.5], np.r_[1.0, np.zeros(11), -0.6])
    y = lfilter([1.0], ar, e)
    for t in range(12, len(y)):
        y[t] += y[t - 12]
    return 50 + y[120:]


def test_c07_sarima_recovery():
    t0 = time.perf_counter()
    ar_hits = ma_hits = 0
    for seed in range(10):
        e = np.random.default_rng(seed).normal(size=700)
        ar = lfilter([1.0], [1.0, -0.7], e)[200:]
        ma = lfilter([1.0, 0.5], [1.0], e)[200:]
        ar_hits += abs(fit_sarima(ar, SarimaOrder(1, 0, 0)).ar[0] - 0.7) <= 0.1
        ma_hits += abs(fit_sarima(ma, SarimaOrder(0, 0, 1)).ma[0] - 0.5) <= 0.1
    seasonal_hits = full_hits = 0
    for seed in range(10):
        o = auto_sarima(_seasonal_ar_sample(seed), 12).order
        seasonal_hits += (o.P, o.D, o.Q, o.period) == (1, 1, 0, 12)
        full_hits += o == SarimaOrder(1, 0, 0, 1, 1, 0, 12)
    elapsed = time.perf_counter() - t0
    ok = ar_hits >= 8 and ma_hits >= 8 and seasonal_hits >= 6 and elapsed < 300
    record(7, "SARIMA recovery", ok,
           f"AR(1) {ar_hits}/10, MA(1) {ma_hits}/10 within 0.1 (>= 8); seasonal order "
           f"(1,1,0)[12] selected {seasonal_hits}/10 (>= 6; full order {full_hits}/10); "
           f"{elapsed:.0f} s (< 300 s)")
    assert ok


def test_c08_fold_count():
    folds = rolling_origin_splits(84, 28, 2, 1)
    ok = len(folds) == 54 and folds[0].train_len == 28
    record(8, "rolling-origin count", ok, f"n=84, min 28, val 2 -> {len(folds)} folds (54)")
    assert ok


def test_c09_metric_identities():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        y, a, f = rng.normal(size=40), rng.normal(size=12), rng.normal(size=12)
        c = 10 ** rng.uniform(-3, 3)
        base = rmsse(y, a, f)
        worst = max(worst, abs(rmsse(c * y, c * a, c * f) - base) / base)
    s = sfb(np.full(6, 110.0), np.full(6, 100.0))
    y = rng.uniform(1, 100, 24)
    sm = smape(y, 2 * y)
    ok = worst <= 1e-10 and abs(s - 10.0) <= 1e-12 and abs(sm - 200 / 3) <= 1e-12
    record(9, "metric identities", ok, f"RMSSE scale drift {worst:.1e} (<= 1e-10); "
           f"SFB(+10%) = {s:.12g}; SMAPE(2y) = {sm:.12g} (200/3)")
    assert ok


def test_c10_statistical_tests():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = 0.0
    cases = 0
    for n, k in ((2, 3), (3, 3), (4, 3), (5, 3), (3, 4), (6, 2), (8, 2)):
        for ties in (False, True):
            x = rng.integers(0, 3, (n, k)).astype(float) if ties else rng.normal(size=(n, k))
            _, p = friedman_exact_oracle(x)
            worst = max(worst, abs(friedman_test(x, method="exact").pvalue - p))
            cases += 1
    for n in range(1, 9):
        for ties in (False, True):
            d = rng.integers(-3, 4, n).astype(float) if ties else rng.normal(0.3, 1.0, n)
            if not np.any(d):
                d[0] = 1.0
            ge, le = wilcoxon_exact_oracle(d)
            x = np.zeros(n)
            worst = max(worst,
                        abs(wilcoxon_signed_rank(x, d, alternative="greater").pvalue - ge),
                        abs(wilcoxon_signed_rank(x, d, alternative="less").pvalue - le),
                        abs(wilcoxon_signed_rank(x, d).pvalue - min(1.0, 2 * min(ge, le))))
            cases += 1
    reps = 2000
    null = np.random.default_rng(11)
    fr = np.mean([friedman_test(null.normal(size=(20, 3))).pvalue < 0.05 for _ in range(reps)])
    wx = np.mean([wilcoxon_signed_rank(np.zeros(40), null.normal(size=40)).pvalue < 0.05
                  for _ in range(reps)])
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and 0.03 <= fr <= 0.07 and 0.03 <= wx <= 0.07 and elapsed < 60
    record(10, "statistical tests", ok, f"{cases} exact-enumeration cases (n <= 8), max p gap "
           f"{worst:.1e} (<= 1e-10); type-I at 5% over {reps} null sims: Friedman {fr:.3f}, "
           f"Wilcoxon {wx:.3f} (in [0.03, 0.07]); {elapsed:.0f} s (< 60 s)")
    assert ok


@pytest.mark.slow
def test_c11_end_to_end_determinism(tmp_path):
    h, panel, _ = generate_hierarchical_sales(GenConfig(seed=11, outlier_rate=0.005,
                                                        negative_rate=0.005))
    smat = build_summing_matrix(h)
    times, blobs = [], []
    for run in ("a", "b"):
        cfg = pl.PipelineConfig(output_dir=str(tmp_path / run), seed=11)
        t0 = time.perf_counter()
        bundle = pl.run_pipeline(cfg, hierarchy=h, panel=panel)
        times.append(time.perf_counter() - t0)
        blobs.append((bundle.output_dir / "report.json").read_bytes())
    report = load_json(tmp_path / "a" / "report" / "report.json")
    worst = 0.0
    mk = h.m_bottom
    s = np.asarray(smat)
    for sec in report["splits"].values():
        for method, table in sec["forecasts"].items():
            if method == "Base":
                continue
            y = np.array([table[n] for n in h.nodes])
            rel = np.abs(y - s @ y[-mk:]) / np.maximum(np.abs(y), 1.0)
            worst = max(worst, float(rel.max()))
    same = blobs[0] == blobs[1]
    ok = same and worst <= 1e-6 and max(times) < 300
    record(11, "end-to-end determinism", ok,
           f"{h.m} series, {panel.n} months, 2 splits: reports byte-identical={same}; worst "
           f"reconciled incoherence {worst:.1e} (<= 1e-6); runs {times[0]:.0f} s / "
           f"{times[1]:.0f} s (< 300 s)")
    assert ok


@pytest.mark.slow
def test_c12_reconciliation_improves_aggregates():
    wins = []
    for seed in range(10):
        h, panel, _ = generate_hierarchical_sales(GenConfig(seed=seed))
        cfg = pl.PipelineConfig(candidates=(12,), methods=("Base", "BU", "OLS", "WLSS", "MINT"))
        bundle = pl.run_pipeline(cfg, hierarchy=h, panel=panel, write=False)
        agg = {m: np.mean([res.metrics[m].by_level("rmsse")[f"level{k}"]
                           for res in bundle.splits.values() for k in range(h.levels - 1)])
               for m in cfg.methods}
        if agg["MINT"] <= agg["Base"] and agg["WLSS"] <= agg["Base"]:
            wins.append(seed)
    ok = len(wins) >= 7
    record(12, "reconciliation helps aggregates", ok,
           f"MinT and WLSS weighted RMSSE <= Base over the aggregate levels on {len(wins)}/10 "
           f"synthetic panels (>= 7); winning seeds {wins}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))

"""Rank-based tests for comparing forecasting methods across series."""
from __future__ import annotations

from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy import stats as sps

EXACT_WILCOXON_MAX_N = 25


@dataclass(frozen=True)
class ScoreMatrix:
    """Subjects in rows (series x evaluation period), methods in columns."""

    values: np.ndarray
    columns: tuple[str, ...]
    rows: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 2:
            raise ValueError("scores must be a 2-D array")
        n, k = v.shape
        if k < 2 or n < 2:
            raise ValueError(f"need at least 2 subjects and 2 methods, got {n} x {k}")
        if len(self.columns) != k:
            raise ValueError("column labels do not match the score matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError("score matrix has missing or non-finite cells")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def ranks(self) -> np.ndarray:
        return sps.rankdata(self.values, axis=1)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float


def _as_scores(scores) -> ScoreMatrix:
    if isinstance(scores, ScoreMatrix):
        return scores
    v = np.asarray(scores, float)
    cols = tuple(str(i) for i in range(v.shape[1])) if v.ndim == 2 else ()
    return ScoreMatrix(v, cols)


def _tie_term(ranks: np.ndarray) -> float:
    total = 0.0
    for row in ranks:
        _, counts = np.unique(row, return_counts=True)
        total += float(np.sum(counts ** 3 - counts))
    return total


def _friedman_stat(rank_sums: np.ndarray, n: int, k: int, ties: float) -> float:
    corr = 1.0 - ties / (n * k * (k * k - 1))
    if corr <= 0:
        return 0.0
    q = 12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums ** 2)) - 3.0 * n * (k + 1)
    return max(q / corr, 0.0)


def _friedman_exact_pvalue(ranks: np.ndarray) -> float:
    """P(sum R_j^2 >= observed) with each row's ranks permuted uniformly.

    Dynamic programming over the vector of (doubled, hence integer) column
    rank sums.
    """
    doubled = np.rint(2 * ranks).astype(int)
    n, k = doubled.shape
    dist: dict[tuple, int] = {(0,) * k: 1}
    for row in doubled:
        perms = set(permutations(row.tolist()))
        nxt: dict[tuple, int] = defaultdict(int)
        for state, count in dist.items():
            for perm in perms:
                nxt[tuple(a + b for a, b in zip(state, perm))] += count
        dist = nxt
    observed = int(np.sum(doubled.sum(axis=0) ** 2))
    total = sum(dist.values())
    tail = sum(c for state, c in dist.items() if sum(x * x for x in state) >= observed)
    return tail / total


def friedman_test(scores, method: str = "asymptotic") -> TestResult:
    """Friedman chi-square on within-row average ranks with tie correction.

    ``method="exact"`` replaces the chi-square p-value by the permutation
    distribution of the statistic (feasible for small n and k).
    """
    sm = _as_scores(scores)
    ranks = sm.ranks
    n, k = ranks.shape
    stat = _friedman_stat(ranks.sum(axis=0), n, k, _tie_term(ranks))
    if method == "asymptotic":
        p = float(sps.chi2.sf(stat, k - 1)) if stat > 0 else 1.0
    elif method == "exact":
        p = _friedman_exact_pvalue(ranks)
    else:
        raise ValueError(f"unknown method {method!r}")
    return TestResult(stat, min(max(p, np.finfo(float).tiny), 1.0))


def holm_adjust(pvalues: Sequence[float]) -> np.ndarray:
    p = np.asarray(pvalues, float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, min(1.0, (m - i) * p[idx]))
        adj[idx] = running
    return adj


@dataclass(frozen=True)
class DunnResult:
    control: str
    columns: tuple[str, ...]
    z: np.ndarray
    pvalues: np.ndarray
    adjusted: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.columns, self.adjusted.tolist()))


def dunn_test_holm(scores, control: str) -> DunnResult:
    """Mean-rank z tests of every method against ``control`` with Holm's
    step-down adjustment."""
    sm = _as_scores(scores)
    if control not in sm.columns:
        raise KeyError(f"control column {control!r} not in {sm.columns}")
    ranks = sm.ranks
    n, k = ranks.shape
    mean_ranks = ranks.mean(axis=0)
    se = np.sqrt(k * (k + 1) / (6.0 * n))
    c = sm.columns.index(control)
    others = [j for j in range(k) if j != c]
    z = (mean_ranks[others] - mean_ranks[c]) / se
    raw = np.minimum(2.0 * sps.norm.sf(np.abs(z)), 1.0)
    return DunnResult(control, tuple(sm.columns[j] for j in others), z, raw, holm_adjust(raw))


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of the doubled W+ statistic."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.tolist():
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(before, after, corrections: int = 1, *,
                         alternative: str = "two-sided", method: str = "auto") -> TestResult:
    """Signed-rank test on ``after - before``.

    Zero differences are dropped and tied magnitudes get average ranks. The
    p-value is exact for up to 25 nonzero pairs and otherwise uses the normal
    approximation with continuity and tie corrections. It is multiplied by
    ``corrections`` (Bonferroni) and capped at 1. The statistic is
    ``min(W+, W-)`` for the two-sided test and ``W+`` otherwise.
    """
    x = np.asarray(before, float)
    y = np.asarray(after, float)
    if x.shape != y.shape:
        raise ValueError("before and after must have equal length")
    if corrections < 1:
        raise ValueError("corrections must be a positive integer")
    d = y - x
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero; the signed-rank test is undefined")
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_WILCOXON_MAX_N else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_counts(doubled)
        total = 2 ** n
        obs = int(round(2 * w_plus))
        upper = float(sum(counts[obs:])) / total
        lower = float(sum(counts[: obs + 1])) / total
        p = {"greater": upper, "less": lower,
             "two-sided": min(1.0, 2.0 * min(upper, lower))}[alternative]
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        _, t = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t ** 3 - t)) / 48.0
        sd = np.sqrt(var)
        diff = w_plus - mean
        if alternative == "two-sided":
            z = max(abs(diff) - 0.5, 0.0) / sd
            p = min(1.0, 2.0 * sps.norm.sf(z))
        elif alternative == "greater":
            p = float(sps.norm.sf((diff - 0.5) / sd))
        elif alternative == "less":
            p = float(sps.norm.cdf((diff + 0.5) / sd))
        else:
            raise ValueError(f"unknown alternative {alternative!r}")
    else:
        raise ValueError(f"unknown method {method!r}")
    stat = min(w_plus, w_minus) if alternative == "two-sided" else w_plus
    p = min(1.0, max(float(p), np.finfo(float).tiny) * corrections)
    return TestResult(stat, p)

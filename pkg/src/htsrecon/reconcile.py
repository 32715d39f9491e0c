"""Combination and reconciliation of hierarchical forecasts.

Every method is a choice of the m_k x m matrix ``G`` in ``y_tilde = S G y_hat``.
Generalized least squares variants use ``G = (S' W^-1 S)^-1 S' W^-1`` for a
weight matrix ``W``; the non-negative variants solve the same problem as a
bound-constrained quadratic program on the bottom level.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

WEIGHT_KINDS = ("OLS", "WLSV", "WLSS", "MinT-sample", "MinT-shrink", "custom")
# floor of the shrinkage intensity and relative ridge for the MinT covariance
SHRINK_FLOOR = 1e-3
RIDGE = 1e-10

METHODS = ("Base", "BU", "TD", "OLS", "NNOLS", "WLSS", "WLSV", "MINT", "NNMINT")
_GLS_KIND = {"OLS": "OLS", "WLSS": "WLSS", "WLSV": "WLSV", "MINT": "MinT-shrink",
             "MINTSAMPLE": "MinT-sample"}


class RankError(np.linalg.LinAlgError):
    """S' W^-1 S is not positive-definite."""


class QPConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightMatrix:
    entries: np.ndarray
    kind: str = "custom"
    shrinkage: float | None = None

    def __post_init__(self):
        w = np.asarray(self.entries, float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {w.shape}")
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
        if np.max(np.abs(w - w.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("weight matrix is not symmetric")
        try:
            linalg.cholesky(w, lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"{self.kind} weight matrix is not positive-definite") from exc
        object.__setattr__(self, "entries", w)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class GMatrix:
    entries: np.ndarray
    method: str

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass
class ForecastSet:
    base: np.ndarray
    reconciled: dict[str, np.ndarray] = field(default_factory=dict)
    g: dict[str, GMatrix] = field(default_factory=dict)

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(self.reconciled)


def _smat(s) -> np.ndarray:
    out = np.asarray(s, float)
    if out.ndim != 2 or out.shape[0] < out.shape[1]:
        raise ValueError(f"summing matrix must be m x m_k with m >= m_k, got {out.shape}")
    return out


def g_bottom_up(s) -> GMatrix:
    smat = _smat(s)
    m, mk = smat.shape
    return GMatrix(np.hstack([np.zeros((mk, m - mk)), np.eye(mk)]), "BU")


def td_proportions(history, m_bottom) -> np.ndarray:
    """Historical-average proportions: each bottom series' total over the
    top series' total. ``history`` is m x T (rows in hierarchy order, NaN
    for absent months); ``m_bottom`` is m_k or a summing matrix."""
    y = np.asarray(getattr(history, "values", history), float)
    mk = m_bottom if isinstance(m_bottom, (int, np.integer)) else np.asarray(m_bottom).shape[1]
    total = np.nansum(y[0])
    if not total > 0:
        raise ZeroDivisionError("top-level historical total must be positive")
    return np.nansum(y[-mk:], axis=1) / total


def g_top_down(p, m: int) -> GMatrix:
    p = np.asarray(p, float)
    if np.any(p < 0):
        raise ValueError("proportions must be nonnegative")
    if m < len(p):
        raise ValueError("m must be at least the number of proportions")
    g = np.zeros((len(p), m))
    g[:, 0] = p
    return GMatrix(g, "TD")


def _pairwise_moments(residuals: np.ndarray):
    e = np.asarray(residuals, float)
    present = ~np.isnan(e)
    e0 = np.where(present, e, 0.0)
    pm = present.astype(float)
    counts = pm @ pm.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = np.where(counts > 0, (e0 @ e0.T) / counts, 0.0)
    return e0, pm, counts, cov


def shrink_covariance(residuals) -> tuple[np.ndarray, float]:
    """Uncentered residual covariance shrunk toward its diagonal.

    The intensity is the Schafer-Strimmer estimate computed on standardized
    residuals, clipped to ``[SHRINK_FLOOR, 1]``. Pairs are formed from the
    months where both series have residuals.
    """
    e0, pm, counts, cov = _pairwise_moments(residuals)
    d = np.diag(cov).copy()
    sd = np.sqrt(np.where(d > 0, d, 1.0))
    xs = e0 / sd[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
        s2 = (xs * xs) @ (xs * xs).T
        s1 = xs @ xs.T
        var = (s2 - s1 * s1 / counts) / (counts * (counts - 1.0))
    off = ~np.eye(len(d), dtype=bool) & (counts > 1)
    num = float(np.sum(np.where(off, var, 0.0)))
    den = float(np.sum(np.where(off, corr * corr, 0.0)))
    lam = 1.0 if den <= 0 else min(max(num / den, 0.0), 1.0)
    lam = max(lam, SHRINK_FLOOR)
    shrunk = (1.0 - lam) * cov
    shrunk[np.diag_indices_from(shrunk)] = d
    return shrunk, lam


def weight_matrix(kind: str, s, residuals=None, custom=None) -> WeightMatrix:
    """Build W for one of the supported kinds.

    ``residuals`` (m x T, rows in hierarchy order, NaN where absent) are the
    in-sample one-step errors of the base models and are required for WLSV
    and the MinT kinds.
    """
    smat = _smat(s)
    m = smat.shape[0]
    if kind == "OLS":
        return WeightMatrix(np.eye(m), kind)
    if kind == "WLSS":
        return WeightMatrix(np.diag(smat.sum(axis=1)), kind)
    if kind == "custom":
        if custom is None:
            raise ValueError("custom weight kind needs a matrix")
        return WeightMatrix(np.asarray(custom, float), kind)
    if kind not in WEIGHT_KINDS:
        raise ValueError(f"unknown weight kind {kind!r}; expected one of {WEIGHT_KINDS}")
    if residuals is None:
        raise ValueError(f"{kind} requires base-model residuals")
    e = np.asarray(residuals, float)
    if e.ndim != 2 or e.shape[0] != m:
        raise ValueError(f"residuals must be {m} x T, got shape {e.shape}")
    per_series = np.sum(~np.isnan(e), axis=1)
    if e.shape[1] < 2 or per_series.min() < 2:
        bad = int(np.argmin(per_series))
        raise ValueError(f"covariance estimation needs at least 2 residuals per series; "
                         f"row {bad} has {per_series[bad]}")
    if kind == "WLSV":
        _, _, _, cov = _pairwise_moments(e)
        d = np.diag(cov).copy()
        d += RIDGE * max(float(d.mean()), np.finfo(float).tiny)
        return WeightMatrix(np.diag(d), kind)
    if kind == "MinT-sample":
        _, _, _, cov = _pairwise_moments(e)
        lam = None
    else:
        cov, lam = shrink_covariance(e)
    cov = 0.5 * (cov + cov.T)
    ridge = RIDGE * max(float(np.mean(np.diag(cov))), np.finfo(float).tiny)
    cov[np.diag_indices_from(cov)] += ridge
    return WeightMatrix(cov, kind, lam)


def g_gls(s, w, method: str | None = None) -> GMatrix:
    """(S' W^-1 S)^-1 S' W^-1 through two Cholesky solves."""
    smat = _smat(s)
    wmat = np.asarray(w, float)
    if wmat.shape != (smat.shape[0], smat.shape[0]):
        raise ValueError(f"W must be {smat.shape[0]} x {smat.shape[0]}, got {wmat.shape}")
    wf = linalg.cho_factor(wmat, lower=True)
    winv_s = linalg.cho_solve(wf, smat)
    q = smat.T @ winv_s
    q = 0.5 * (q + q.T)
    try:
        qf = linalg.cho_factor(q, lower=True)
    except linalg.LinAlgError as exc:
        raise RankError("S' W^-1 S is singular; S must have full column rank") from exc
    g = linalg.cho_solve(qf, winv_s.T)
    tag = method or getattr(w, "kind", "GLS")
    return GMatrix(g, tag)


def g_ols(s) -> GMatrix:
    """(S'S)^-1 S' by a direct normal-equations solve."""
    smat = _smat(s)
    return GMatrix(np.linalg.solve(smat.T @ smat, smat.T), "OLS")


def reconcile_forecasts(s, g, base) -> np.ndarray:
    smat = _smat(s)
    gmat = np.asarray(g, float)
    yhat = np.asarray(base, float)
    vector = yhat.ndim == 1
    if vector:
        yhat = yhat[:, None]
    if gmat.shape != (smat.shape[1], smat.shape[0]) or yhat.shape[0] != smat.shape[0]:
        raise ValueError(f"shape mismatch: S {smat.shape}, G {gmat.shape}, base {yhat.shape}")
    out = smat @ (gmat @ yhat)
    return out[:, 0] if vector else out


def qp_objective(q, c, b) -> float:
    b = np.asarray(b, float)
    return float(0.5 * b @ np.asarray(q) @ b - np.asarray(c) @ b)


def kkt_residual(q, c, b) -> float:
    """Max-norm violation of the KKT conditions of min 1/2 b'Qb - c'b, b >= 0."""
    b = np.asarray(b, float)
    grad = np.asarray(q, float) @ b - np.asarray(c, float)
    feas = np.maximum(-b, 0.0)
    stat = np.where(b > 0, np.abs(grad), np.maximum(-grad, 0.0))
    comp = np.abs(b * grad)
    return float(max(feas.max(initial=0.0), stat.max(initial=0.0), comp.max(initial=0.0)))


def solve_nonneg_qp(q, c, *, max_iter: int | None = None, tol: float | None = None) -> np.ndarray:
    """Minimize 1/2 b'Qb - c'b subject to b >= 0 (Q symmetric positive-definite).

    Lawson-Hanson active-set method applied to the Cholesky-factored
    sub-systems of Q. The entering index is the one with the most negative
    gradient (lowest index on ties).
    """
    q = np.asarray(q, float)
    c = np.asarray(c, float)
    n = len(c)
    if q.shape != (n, n):
        raise ValueError(f"Q must be {n} x {n}, got {q.shape}")
    if np.max(np.abs(q - q.T), initial=0.0) > 1e-10 * max(1.0, float(np.abs(q).max(initial=0))):
        raise ValueError("Q is not symmetric")
    try:
        linalg.cholesky(q, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Q is not positive-definite") from exc
    if n == 0:
        return np.zeros(0)
    if tol is None:
        tol = 1e-13 * max(1.0, float(np.abs(c).max()), float(np.abs(q).max()))
    if max_iter is None:
        max_iter = 10 * n + 50

    def solve_passive(mask):
        idx = np.flatnonzero(mask)
        z = np.zeros(n)
        if len(idx):
            sub = q[np.ix_(idx, idx)]
            f = linalg.cho_factor(sub, lower=True)
            zi = linalg.cho_solve(f, c[idx])
            # one step of iterative refinement
            zi += linalg.cho_solve(f, c[idx] - sub @ zi)
            z[idx] = zi
        return z

    b = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    it = 0
    while True:
        dual = c - q @ b
        cand = np.where(~passive, dual, -np.inf)
        j = int(np.argmax(cand))
        if passive.all() or cand[j] <= tol:
            break
        it += 1
        if it > max_iter:
            raise QPConvergenceError(
                f"active-set iteration cap {max_iter} reached; KKT residual {kkt_residual(q, c, b):.3e}")
        passive[j] = True
        while True:
            z = solve_passive(passive)
            if np.all(z[passive] > 0):
                b = z
                break
            # step back toward b until the first passive coordinate hits zero
            neg = np.flatnonzero(passive & (z <= 0))
            denom = b[neg] - z[neg]
            ratio = np.where(denom > 0, b[neg] / np.where(denom > 0, denom, 1.0), 0.0)
            k = int(np.argmin(ratio))
            alpha = ratio[k]
            b = b + alpha * (z - b)
            passive[neg[ratio <= alpha]] = False
            passive &= b > 0
            b[~passive] = 0.0
            if not passive.any():
                break
    b[~passive] = 0.0
    return b


def nonnegative_reconcile(s, w, base) -> np.ndarray:
    """Coherent forecasts whose bottom level solves the GLS problem under b >= 0."""
    smat = _smat(s)
    yhat = np.asarray(base, float)
    vector = yhat.ndim == 1
    if vector:
        yhat = yhat[:, None]
    if yhat.shape[0] != smat.shape[0]:
        raise ValueError(f"base has {yhat.shape[0]} rows, S has {smat.shape[0]}")
    wf = linalg.cho_factor(np.asarray(w, float), lower=True)
    winv_s = linalg.cho_solve(wf, smat)
    q = smat.T @ winv_s
    q = 0.5 * (q + q.T)
    cmat = winv_s.T @ yhat
    bottom = np.column_stack([solve_nonneg_qp(q, cmat[:, t]) for t in range(yhat.shape[1])])
    out = smat @ bottom
    return out[:, 0] if vector else out


def coherent_error_covariance(s, g, w) -> np.ndarray:
    smat = _smat(s)
    sg = smat @ np.asarray(g, float)
    v = sg @ np.asarray(w, float) @ sg.T
    return 0.5 * (v + v.T)


def reconcile_all(s, base, methods: Sequence[str] = METHODS, *, residuals=None,
                  history=None, weights: Mapping[str, WeightMatrix] | None = None) -> ForecastSet:
    """Apply each named method to the m x h base forecasts.

    Names are ``Base``, ``BU``, ``TD``, ``OLS``, ``WLSS``, ``WLSV``, ``MINT``
    (shrinkage covariance), ``MINTSAMPLE``, and ``NN`` + any GLS name for the
    non-negative variant. ``history`` feeds the top-down proportions.
    """
    smat = _smat(s)
    yhat = np.asarray(base, float)
    out = ForecastSet(base=yhat)
    cache: dict[str, WeightMatrix] = dict(weights or {})

    def get_w(name: str) -> WeightMatrix:
        kind = _GLS_KIND[name]
        if kind not in cache:
            cache[kind] = weight_matrix(kind, smat, residuals)
        return cache[kind]

    for name in methods:
        key = name.upper()
        if key == "BASE":
            out.reconciled[name] = yhat.copy()
        elif key == "BU":
            g = g_bottom_up(smat)
            out.g[name] = g
            out.reconciled[name] = reconcile_forecasts(smat, g, yhat)
        elif key == "TD":
            if history is None:
                raise ValueError("TD needs the historical panel")
            g = g_top_down(td_proportions(history, smat.shape[1]), smat.shape[0])
            out.g[name] = g
            out.reconciled[name] = reconcile_forecasts(smat, g, yhat)
        elif key in _GLS_KIND:
            g = g_gls(smat, get_w(key), method=name)
            out.g[name] = g
            out.reconciled[name] = reconcile_forecasts(smat, g, yhat)
        elif key.startswith("NN") and key[2:] in _GLS_KIND:
            out.reconciled[name] = nonnegative_reconcile(smat, get_w(key[2:]), yhat)
        else:
            raise ValueError(f"unknown reconciliation method {name!r}")
    return out

"""Exact Gaussian likelihood of a zero-mean ARMA process via the Kalman filter.

The state-space form is Harvey's: with ``r = max(p, q + 1)``,

    alpha_t = T alpha_{t-1} + R eps_t,      w_t = alpha_{1,t}

where ``T`` has the AR coefficients in its first column and ones on the
superdiagonal, and ``R = (1, theta_1, ..., theta_{r-1})'``. The innovation
variance is concentrated out of the likelihood, so the filter runs with unit
variance and ``sigma2`` is recovered as the mean scaled squared innovation.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.linalg import solve_discrete_lyapunov

_LOG_2PI = math.log(2.0 * math.pi)


def _system(phi: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    r = max(len(phi), len(theta) + 1, 1)
    phi_full = np.zeros(r)
    phi_full[: len(phi)] = phi
    rvec = np.zeros(r)
    rvec[0] = 1.0
    rvec[1 : len(theta) + 1] = theta
    return phi_full, rvec, r


@njit(cache=True, error_model="numpy")
def _psi_weights(phi, rvec, n):
    r = phi.shape[0]
    psi = np.zeros(n)
    psi[0] = 1.0
    for k in range(1, n):
        acc = rvec[k] if k < r else 0.0
        for j in range(1, min(k, r) + 1):
            acc += phi[j - 1] * psi[k - j]
        psi[k] = acc
    return psi


@njit(cache=True, error_model="numpy")
def _gauss_solve(a, b):
    """Solve a x = b in place by Gaussian elimination with partial pivoting."""
    n = b.shape[0]
    for k in range(n):
        piv = k
        big = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > big:
                big = abs(a[i, k])
                piv = i
        if piv != k:
            for j in range(k, n):
                tmp = a[k, j]
                a[k, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        d = a[k, k]
        if d == 0.0:
            d = 1e-300
        for i in range(k + 1, n):
            fac = a[i, k] / d
            if fac != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= fac * a[k, j]
                b[i] -= fac * b[k]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= a[i, j] * b[j]
        b[i] = acc / (a[i, i] if a[i, i] != 0.0 else 1e-300)
    return b


@njit(cache=True, error_model="numpy")
def _arma_acvf(phi, rvec, nlags):
    """Autocovariances 0..nlags of an ARMA process with unit innovation
    variance, or an empty array when the AR part is not stationary.

    The AR autocorrelations come from the Levinson step-down recursion
    (O(p^2)); the MA filter is applied through its nonzero coefficients.
    """
    p = phi.shape[0]
    while p > 0 and phi[p - 1] == 0.0:
        p -= 1
    qn = rvec.shape[0]
    while qn > 1 and rvec[qn - 1] == 0.0:
        qn -= 1
    span = nlags + qn
    rho = np.zeros(span + 1)
    rho[0] = 1.0
    g0 = 1.0
    if p > 0:
        coef = np.zeros((p + 1, p + 1))
        for j in range(p):
            coef[p, j] = phi[j]
        for k in range(p, 0, -1):
            pk = coef[k, k - 1]
            den = 1.0 - pk * pk
            if not den > 1e-14:
                return np.zeros(0)
            g0 /= den
            for j in range(k - 1):
                coef[k - 1, j] = (coef[k, j] + pk * coef[k, k - 2 - j]) / den
        for k in range(1, p + 1):
            acc = 0.0
            for j in range(k):
                acc += coef[k, j] * rho[k - 1 - j]
            rho[k] = acc
        for k in range(p + 1, span + 1):
            acc = 0.0
            for j in range(p):
                acc += phi[j] * rho[k - 1 - j]
            rho[k] = acc
    nz = 0
    idx = np.empty(qn, dtype=np.int64)
    for i in range(qn):
        if rvec[i] != 0.0:
            idx[nz] = i
            nz += 1
    # c(m) = sum_j theta_j rho(|m + j|) for m = -(qn-1)..nlags, then
    # gamma(k) = sum_i theta_i c(k - i)
    c = np.zeros(nlags + qn)
    for mm in range(nlags + qn):
        m = mm - (qn - 1)
        acc = 0.0
        for b in range(nz):
            j = idx[b]
            acc += rvec[j] * rho[abs(m + j)]
        c[mm] = acc
    gamma = np.zeros(nlags + 1)
    for k in range(nlags + 1):
        acc = 0.0
        for a in range(nz):
            i = idx[a]
            acc += rvec[i] * c[k - i + qn - 1]
        gamma[k] = acc * g0
    return gamma


@njit(cache=True, error_model="numpy")
def _stationary_cov(phi, rvec):
    r = phi.shape[0]
    psi = _psi_weights(phi, rvec, r + 1)
    gamma = _arma_acvf(phi, rvec, r)
    if gamma.shape[0] == 0:
        # gamma(k) - sum_j phi_j gamma(|k-j|) = sum_{j>=k} theta_j psi_{j-k}
        a = np.zeros((r + 1, r + 1))
        b = np.zeros(r + 1)
        for k in range(r + 1):
            a[k, k] += 1.0
            for j in range(1, r + 1):
                a[k, abs(k - j)] -= phi[j - 1]
            acc = 0.0
            for j in range(k, r):
                acc += rvec[j] * psi[j - k]
            b[k] = acc
        gamma = _gauss_solve(a, b)
    # first row: Cov(w_t, alpha_{j,t}) with
    # alpha_{j,t} = sum_l phi_{j+l} w_{t-1-l} + sum_l theta_{j-1+l} eps_{t-l}
    p = np.zeros((r + 1, r + 1))
    for j in range(r):
        acc = 0.0
        for l in range(r - j):
            acc += phi[j + l] * gamma[l + 1] + rvec[j + l] * psi[l]
        p[0, j] = acc
        p[j, 0] = acc
    # remaining entries from P = T P T' + R R', bottom-right first
    for i in range(r - 1, 0, -1):
        for j in range(r - 1, i - 1, -1):
            val = (phi[i] * phi[j] * p[0, 0] + phi[i] * p[0, j + 1] + phi[j] * p[i + 1, 0]
                   + p[i + 1, j + 1] + rvec[i] * rvec[j])
            p[i, j] = val
            p[j, i] = val
    return p[:r, :r].copy()


def stationary_covariance(phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unconditional state covariance (unit innovation variance)."""
    phi_full, rvec, _ = _system(np.asarray(phi, float), np.asarray(theta, float))
    return _stationary_cov(phi_full, rvec)


def stationary_covariance_lyapunov(phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Same quantity by a generic discrete Lyapunov solve (slower; for checking)."""
    phi_full, rvec, r = _system(np.asarray(phi, float), np.asarray(theta, float))
    tmat = np.zeros((r, r))
    tmat[:, 0] = phi_full
    tmat[:-1, 1:] = np.eye(r - 1)
    p0 = solve_discrete_lyapunov(tmat, np.outer(rvec, rvec))
    return 0.5 * (p0 + p0.T)


@njit(cache=True, error_model="numpy")
def _filter(w, phi, rvec, p0, steady_tol):
    n = w.shape[0]
    r = phi.shape[0]
    a = np.zeros(r)
    p = p0.copy()
    v = np.empty(n)
    f = np.empty(n)
    tp = np.empty((r, r))
    pn = np.empty((r, r))
    k = np.empty(r)
    row0 = np.empty(r)
    steady = False
    fs = 0.0
    for t in range(n):
        if steady:
            vt = w[t] - a[0]
            v[t] = vt
            f[t] = fs
            # a <- T (a + K v)
            for i in range(r):
                k[i] = a[i] + p[i, 0] / fs * vt
            for i in range(r - 1):
                a[i] = phi[i] * k[0] + k[i + 1]
            a[r - 1] = phi[r - 1] * k[0]
            continue
        vt = w[t] - a[0]
        ft = p[0, 0]
        if ft <= 1e-12:
            ft = 1e-12
        v[t] = vt
        f[t] = ft
        # measurement update
        for i in range(r):
            k[i] = p[i, 0] / ft
        for i in range(r):
            a[i] = a[i] + k[i] * vt
        for j in range(r):
            row0[j] = p[0, j]
        for i in range(r):
            for j in range(r):
                p[i, j] = p[i, j] - k[i] * row0[j]
        # prediction: a <- T a
        a0 = a[0]
        for i in range(r - 1):
            a[i] = phi[i] * a0 + a[i + 1]
        a[r - 1] = phi[r - 1] * a0
        # P <- T P T' + R R'
        for j in range(r):
            for i in range(r - 1):
                tp[i, j] = phi[i] * p[0, j] + p[i + 1, j]
            tp[r - 1, j] = phi[r - 1] * p[0, j]
        delta = 0.0
        for i in range(r):
            for j in range(r - 1):
                val = phi[j] * tp[i, 0] + tp[i, j + 1] + rvec[i] * rvec[j]
                pn[i, j] = val
            pn[i, r - 1] = phi[r - 1] * tp[i, 0] + rvec[i] * rvec[r - 1]
        for i in range(r):
            for j in range(r):
                d = abs(pn[i, j] - p[i, j])
                if d > delta:
                    delta = d
                p[i, j] = pn[i, j]
        if delta < steady_tol:
            steady = True
            fs = p[0, 0]
    return v, f, a, p


@njit(cache=True, error_model="numpy")
def _chandrasekhar(w, phi, rvec, p0):
    """Same filter with the Riccati step replaced by Chandrasekhar recursions.

    With a stationary initial covariance the increment P_{t+1} - P_t has rank
    one, so each step costs O(r) instead of O(r^2).
    """
    n = w.shape[0]
    r = phi.shape[0]
    v = np.empty(n)
    f = np.empty(n)
    a = np.zeros(r)
    # K is the prediction-form gain T P Z' / F; W, M factor the increment
    ft = p0[0, 0]
    kg = np.empty(r)
    for i in range(r - 1):
        kg[i] = (phi[i] * p0[0, 0] + p0[i + 1, 0]) / ft
    kg[r - 1] = phi[r - 1] * p0[0, 0] / ft
    wv = kg.copy()
    m = -ft
    tw = np.empty(r)
    for t in range(n):
        vt = w[t] - a[0]
        v[t] = vt
        f[t] = ft
        # a <- T a + K v
        a0 = a[0]
        for i in range(r - 1):
            a[i] = phi[i] * a0 + a[i + 1] + kg[i] * vt
        a[r - 1] = phi[r - 1] * a0 + kg[r - 1] * vt
        zw = wv[0]
        f_next = ft + zw * zw * m
        if f_next < 1e-12:
            f_next = 1e-12
        # T W
        for i in range(r - 1):
            tw[i] = phi[i] * wv[0] + wv[i + 1]
        tw[r - 1] = phi[r - 1] * wv[0]
        for i in range(r):
            kg[i] = (kg[i] * ft + tw[i] * m * zw) / f_next
        m_next = m + m * zw * zw * m / ft
        for i in range(r):
            wv[i] = tw[i] - kg[i] * zw
        m = m_next
        ft = f_next
    return v, f, a


@njit(cache=True, error_model="numpy")
def _chandrasekhar_sums(w, mu, phi, rvec, p0, steady_tol):
    """Sum of v^2/F and of log F along the Chandrasekhar recursions, without
    storing the innovations. Once the rank-one increment of F falls below
    ``steady_tol`` (relative) the gain is frozen and only the state is
    propagated."""
    n = w.shape[0]
    r = phi.shape[0]
    a = np.zeros(r)
    ft = p0[0, 0]
    if not ft > 1e-12:
        return np.inf, 0.0
    kg = np.empty(r)
    for i in range(r - 1):
        kg[i] = (phi[i] * p0[0, 0] + p0[i + 1, 0]) / ft
    kg[r - 1] = phi[r - 1] * p0[0, 0] / ft
    wv = kg.copy()
    m = -ft
    tw = np.empty(r)
    ssq = 0.0
    slog = 0.0
    steady = False
    logf = math.log(ft)
    for t in range(n):
        vt = w[t] - mu - a[0]
        ssq += vt * vt / ft
        slog += logf
        a0 = a[0]
        for i in range(r - 1):
            a[i] = phi[i] * a0 + a[i + 1] + kg[i] * vt
        a[r - 1] = phi[r - 1] * a0 + kg[r - 1] * vt
        if steady:
            continue
        zw = wv[0]
        inc = zw * zw * m
        f_next = ft + inc
        if f_next < 1e-12:
            f_next = 1e-12
        for i in range(r - 1):
            tw[i] = phi[i] * wv[0] + wv[i + 1]
        tw[r - 1] = phi[r - 1] * wv[0]
        for i in range(r):
            kg[i] = (kg[i] * ft + tw[i] * m * zw) / f_next
        m_next = m + m * zw * zw * m / ft
        for i in range(r):
            wv[i] = tw[i] - kg[i] * zw
        m = m_next
        ft = f_next
        logf = math.log(ft)
        if abs(inc) < steady_tol * ft:
            steady = True
    return ssq, slog


class FilterResult:
    __slots__ = ("loglik", "sigma2", "innovations", "variances", "state", "state_cov")

    def __init__(self, loglik, sigma2, innovations, variances, state, state_cov):
        self.loglik = loglik
        self.sigma2 = sigma2
        self.innovations = innovations
        self.variances = variances
        self.state = state
        self.state_cov = state_cov


def arma_filter(w: np.ndarray, phi: np.ndarray, theta: np.ndarray, *,
                fast: bool = True, steady_tol: float = 1e-10) -> FilterResult:
    """Run the filter on a demeaned stationary series.

    ``innovations`` are the one-step prediction errors; ``state`` is the
    predicted state for the period after the sample. ``fast`` selects the
    Chandrasekhar recursions (no state covariance is returned); otherwise the
    full Riccati update runs until it reaches steady state.
    """
    w = np.ascontiguousarray(w, dtype=float)
    phi_full, rvec, _ = _system(np.asarray(phi, float), np.asarray(theta, float))
    p0 = _stationary_cov(phi_full, rvec)
    if fast:
        v, f, a = _chandrasekhar(w, phi_full, rvec, p0)
        p = None
    else:
        v, f, a, p = _filter(w, phi_full, rvec, p0, steady_tol)
    n = len(w)
    if n == 0:
        return FilterResult(0.0, float("nan"), v, f, a, p)
    sigma2 = float(np.sum(v * v / f) / n)
    if sigma2 <= 0.0:
        sigma2 = 1e-300
    loglik = -0.5 * n * (_LOG_2PI + 1.0 + math.log(sigma2)) - 0.5 * float(np.sum(np.log(f)))
    return FilterResult(loglik, sigma2, v, f, a, p)

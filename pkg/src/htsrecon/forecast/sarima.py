"""Seasonal ARIMA estimation by exact Gaussian maximum likelihood."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from htsrecon.forecast.kalman import (_LOG_2PI, _chandrasekhar_sums, _stationary_cov,
                                      arma_filter)

logger = logging.getLogger(__name__)

MAX_P = 3
MAX_Q = 3
MAX_SP = 2
MAX_SQ = 2
# relative step of the central-difference gradient
GRAD_STEP = 1e-5
# relative size of the prediction-variance increment below which the filter
# gain is treated as converged
STEADY_TOL = 1e-13


class InsufficientDataError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class SarimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    period: int = 1

    def __post_init__(self):
        for name in ("p", "d", "q", "P", "D", "Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.d > 2 or self.D > 1:
            raise ValueError(f"differencing orders out of range: d={self.d}, D={self.D}")
        if self.p > MAX_P or self.q > MAX_Q or self.P > MAX_SP or self.Q > MAX_SQ:
            raise ValueError(f"order outside the search grid: {self}")
        if self.period == 1 and (self.P or self.D or self.Q):
            raise ValueError("seasonal terms require period > 1")

    @property
    def n_diff(self) -> int:
        """Observations consumed by differencing."""
        return self.d + self.D * self.period

    @property
    def n_arma(self) -> int:
        return self.p + self.q + self.P + self.Q

    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})[{self.period}]"


@dataclass
class SarimaModel:
    order: SarimaOrder
    ar: np.ndarray
    ma: np.ndarray
    sar: np.ndarray
    sma: np.ndarray
    mean: float
    include_mean: bool
    sigma2: float
    loglik: float
    aic: float
    residuals: np.ndarray
    series: np.ndarray
    unconstrained: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_params(self) -> int:
        return self.order.n_arma + int(self.include_mean)

    def fitted_values(self) -> np.ndarray:
        """In-sample one-step predictions on the series scale (NaN where
        differencing leaves no prediction)."""
        out = np.full(len(self.series), np.nan)
        k = self.order.n_diff
        out[k:] = self.series[k:] - self.residuals
        return out


def difference_poly(order: SarimaOrder) -> np.ndarray:
    """Coefficients of (1 - B)^d (1 - B^s)^D, lag 0 first."""
    poly = np.array([1.0])
    for _ in range(order.d):
        poly = np.convolve(poly, [1.0, -1.0])
    for _ in range(order.D):
        seas = np.zeros(order.period + 1)
        seas[0], seas[-1] = 1.0, -1.0
        poly = np.convolve(poly, seas)
    return poly


def difference(y: np.ndarray, order: SarimaOrder) -> np.ndarray:
    poly = difference_poly(order)
    if len(poly) == 1:
        return np.asarray(y, float).copy()
    return np.convolve(y, poly, mode="valid")


def _seasonal(coefs: np.ndarray, period: int) -> np.ndarray:
    out = np.zeros(len(coefs) * period)
    out[period - 1 :: period] = coefs
    return out


def expand_ar(ar: np.ndarray, sar: np.ndarray, period: int) -> np.ndarray:
    """Lag coefficients of phi(B) Phi(B^s) written as w_t = sum_k c_k w_{t-k}."""
    poly = np.convolve(np.r_[1.0, -np.asarray(ar)], np.r_[1.0, -_seasonal(sar, period)])
    return -poly[1:]


def expand_ma(ma: np.ndarray, sma: np.ndarray, period: int) -> np.ndarray:
    poly = np.convolve(np.r_[1.0, ma], np.r_[1.0, _seasonal(sma, period)])
    return poly[1:]


@njit(cache=True, error_model="numpy")
def _pacf_to_ar_nb(x):
    p = x.shape[0]
    phi = np.zeros(p)
    tmp = np.zeros(p)
    for k in range(p):
        rk = x[k] / math.sqrt(1.0 + x[k] * x[k])
        for j in range(k):
            tmp[j] = phi[j] - rk * phi[k - 1 - j]
        for j in range(k):
            phi[j] = tmp[j]
        phi[k] = rk
    return phi


def _pacf_to_ar(x: np.ndarray) -> np.ndarray:
    """Map unconstrained reals to coefficients of a stationary AR polynomial."""
    return _pacf_to_ar_nb(np.ascontiguousarray(x, dtype=float))


def _ar_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, float).copy()
    p = len(phi)
    r = np.zeros(p)
    for k in range(p - 1, -1, -1):
        rk = phi[k]
        r[k] = rk
        if k:
            phi = (phi[:k] + rk * phi[:k][::-1]) / (1.0 - rk * rk)
    r = np.clip(r, -0.999, 0.999)
    return r / np.sqrt(1.0 - r * r)


@njit(cache=True, error_model="numpy")
def _polys(x, im, p, q, sp, sq, s):
    """Unconstrained parameters -> (mean, AR lag coefficients, MA lag coefficients)."""
    mu = x[0] if im else 0.0
    o = im
    ar = _pacf_to_ar_nb(x[o : o + p])
    ma = -_pacf_to_ar_nb(x[o + p : o + p + q])
    sar = _pacf_to_ar_nb(x[o + p + q : o + p + q + sp])
    sma = -_pacf_to_ar_nb(x[o + p + q + sp : o + p + q + sp + sq])
    phi = np.zeros(p + s * sp)
    for i in range(p):
        phi[i] += ar[i]
    for j in range(sp):
        phi[s * (j + 1) - 1] += sar[j]
        for i in range(p):
            phi[s * (j + 1) + i] -= ar[i] * sar[j]
    theta = np.zeros(q + s * sq)
    for i in range(q):
        theta[i] += ma[i]
    for j in range(sq):
        theta[s * (j + 1) - 1] += sma[j]
        for i in range(q):
            theta[s * (j + 1) + i] += ma[i] * sma[j]
    return mu, phi, theta


@njit(cache=True, error_model="numpy")
def _negll(x, w, im, p, q, sp, sq, s):
    """Exact negative log-likelihood per observation, sigma^2 concentrated out."""
    mu, phi, theta = _polys(x, im, p, q, sp, sq, s)
    r = max(phi.shape[0], theta.shape[0] + 1)
    phi_full = np.zeros(r)
    phi_full[: phi.shape[0]] = phi
    rvec = np.zeros(r)
    rvec[0] = 1.0
    rvec[1 : theta.shape[0] + 1] = theta
    n = w.shape[0]
    p0 = _stationary_cov(phi_full, rvec)
    ssq, slog = _chandrasekhar_sums(w, mu, phi_full, rvec, p0, STEADY_TOL)
    sigma2 = ssq / n
    if not sigma2 > 0.0:
        return 1e300
    val = 0.5 * (_LOG_2PI + 1.0 + math.log(sigma2)) + 0.5 * slog / n
    if not np.isfinite(val):
        return 1e300
    return val


@njit(cache=True, error_model="numpy")
def _css(x, w, im, p, q, sp, sq, s, skip):
    mu, phi, theta = _polys(x, im, p, q, sp, sq, s)
    n = w.shape[0]
    e = np.zeros(n)
    ssq = 0.0
    for t in range(n):
        acc = w[t] - mu
        for i in range(phi.shape[0]):
            if t - 1 - i >= 0:
                acc -= phi[i] * (w[t - 1 - i] - mu)
        for j in range(theta.shape[0]):
            if t - 1 - j >= 0:
                acc -= theta[j] * e[t - 1 - j]
        e[t] = acc
        if t >= skip:
            ssq += acc * acc
    val = ssq / max(n - skip, 1)
    if not np.isfinite(val):
        return 1e300
    return val


@njit(cache=True, error_model="numpy")
def _objective(x, w, im, p, q, sp, sq, s, skip, kind):
    if kind == 0:
        return _negll(x, w, im, p, q, sp, sq, s)
    return _css(x, w, im, p, q, sp, sq, s, skip)


@njit(cache=True, error_model="numpy")
def _objective_grad(x, w, im, p, q, sp, sq, s, skip, kind, rel_step):
    g = np.empty_like(x)
    xp = x.copy()
    for i in range(x.shape[0]):
        h = rel_step * max(abs(x[i]), 1.0)
        xp[i] = x[i] + h
        fp = _objective(xp, w, im, p, q, sp, sq, s, skip, kind)
        xp[i] = x[i] - h
        fm = _objective(xp, w, im, p, q, sp, sq, s, skip, kind)
        xp[i] = x[i]
        g[i] = (fp - fm) / (2.0 * h)
    return g


@njit(cache=True, error_model="numpy")
def _bfgs(x0, w, im, p, q, sp, sq, s, skip, kind, gtol, maxiter, rel_step):
    """Quasi-Newton minimization with an inverse-Hessian BFGS update and an
    Armijo backtracking line search (quadratic interpolation).

    Returns (x, f, iterations, status) with status 0 = gradient below gtol,
    1 = iteration cap, 2 = line search could not decrease f.
    """
    n = x0.shape[0]
    x = x0.copy()
    f = _objective(x, w, im, p, q, sp, sq, s, skip, kind)
    g = _objective_grad(x, w, im, p, q, sp, sq, s, skip, kind, rel_step)
    hinv = np.eye(n)
    status = 1
    it = 0
    while it < maxiter:
        gmax = 0.0
        for i in range(n):
            gmax = max(gmax, abs(g[i]))
        if gmax <= gtol:
            status = 0
            break
        d = -hinv @ g
        slope = d @ g
        if not slope < 0.0:
            hinv = np.eye(n)
            d = -g.copy()
            slope = -(g @ g)
        alpha = 1.0
        if it == 0:
            dn = 0.0
            for i in range(n):
                dn = max(dn, abs(d[i]))
            alpha = min(1.0, 1.0 / max(dn, 1e-12))
        ok = False
        fn = f
        xn = x
        for _ in range(40):
            xn = x + alpha * d
            fn = _objective(xn, w, im, p, q, sp, sq, s, skip, kind)
            if fn <= f + 1e-4 * alpha * slope:
                ok = True
                break
            denom = 2.0 * (fn - f - slope * alpha)
            nxt = -slope * alpha * alpha / denom if denom > 0 and np.isfinite(fn) else 0.5 * alpha
            alpha = min(max(nxt, 0.1 * alpha), 0.5 * alpha)
        if not ok:
            status = 2
            break
        gn = _objective_grad(xn, w, im, p, q, sp, sq, s, skip, kind, rel_step)
        sv = xn - x
        yv = gn - g
        sy = sv @ yv
        if sy > 1e-12 * np.sqrt((sv @ sv) * (yv @ yv)):
            if it == 0:
                hinv = np.eye(n) * (sy / (yv @ yv))
            rho = 1.0 / sy
            hy = hinv @ yv
            hinv = (hinv - rho * (np.outer(sv, hy) + np.outer(hy, sv))
                    + (rho * rho * (yv @ hy) + rho) * np.outer(sv, sv))
        x = xn
        f = fn
        g = gn
        it += 1
    return x, f, it, status


class _Layout:
    def __init__(self, order: SarimaOrder, include_mean: bool):
        self.order = order
        self.include_mean = include_mean
        sizes = [int(include_mean), order.p, order.q, order.P, order.Q]
        self.bounds = np.cumsum([0] + sizes)
        self.args = (int(include_mean), order.p, order.q, order.P, order.Q, order.period)

    @property
    def size(self) -> int:
        return int(self.bounds[-1])

    def split(self, x):
        b = self.bounds
        return x[b[0] : b[1]], x[b[1] : b[2]], x[b[2] : b[3]], x[b[3] : b[4]], x[b[4] : b[5]]

    def constrain(self, x: np.ndarray):
        mu, ar, ma, sar, sma = self.split(np.asarray(x, float))
        return (
            float(mu[0]) if len(mu) else 0.0,
            _pacf_to_ar(ar),
            -_pacf_to_ar(ma),
            _pacf_to_ar(sar),
            -_pacf_to_ar(sma),
        )

    def unconstrain(self, mean, ar, ma, sar, sma) -> np.ndarray:
        parts = [np.atleast_1d(mean)[: int(self.include_mean)]]
        parts += [_ar_to_pacf(ar), _ar_to_pacf(-np.asarray(ma)),
                  _ar_to_pacf(sar), _ar_to_pacf(-np.asarray(sma))]
        return np.concatenate(parts).astype(float)


def fit_sarima(series, order: SarimaOrder, *, include_mean: bool | None = None,
               start: np.ndarray | None = None, maxiter: int = 200,
               gtol: float = 1e-4) -> SarimaModel:
    """Fit a seasonal ARIMA of fixed order by exact maximum likelihood.

    Starting values come from conditional sum of squares unless ``start``
    (unconstrained parameters, e.g. from a previous fit of the same order)
    is given. The optimizer is BFGS with central-difference gradients.
    """
    y = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    if include_mean is None:
        include_mean = order.d + order.D == 0
    layout = _Layout(order, include_mean)
    w = difference(y, order)
    n = len(w)
    if n < layout.size + 5:
        raise InsufficientDataError(
            f"{order.label()} needs {layout.size + 5} differenced observations, got {n}")

    scale = float(np.std(w))
    if not scale > 0:
        scale = max(float(np.mean(np.abs(w))), 1.0)
    ws = w / scale

    if layout.size == 0:
        x = np.zeros(0)
    else:
        if start is not None and len(start) == layout.size:
            x0 = np.asarray(start, float).copy()
            if include_mean:
                x0[0] = x0[0] / scale
        else:
            x0 = np.zeros(layout.size)
            if include_mean:
                x0[0] = float(np.mean(ws))
            if order.n_arma:
                skip = order.p + order.P * order.period
                xc, _, _, _ = _bfgs(x0, ws, *layout.args, skip, 1, 1e-5, 100, 1e-5)
                if np.all(np.isfinite(xc)):
                    x0 = np.clip(xc, -6.0, 6.0)
        args = (ws,) + layout.args
        f0 = _negll(x0, *args)
        xr, fr, _, status = _bfgs(x0, ws, *layout.args, 0, 0, gtol, maxiter, GRAD_STEP)
        x = xr if np.isfinite(fr) and fr <= f0 else x0
        if _negll(x, *args) >= 1e299:
            raise ConvergenceError(
                f"{order.label()}: likelihood optimization failed (status {status})")

    mu_s, ar, ma, sar, sma = layout.constrain(x)
    filt = arma_filter(ws - mu_s, expand_ar(ar, sar, order.period),
                       expand_ma(ma, sma, order.period))
    loglik = filt.loglik - n * math.log(scale)
    k = layout.size
    unconstrained = x.copy()
    if include_mean:
        unconstrained[0] *= scale
    return SarimaModel(
        order=order, ar=ar, ma=ma, sar=sar, sma=sma,
        mean=mu_s * scale, include_mean=include_mean,
        sigma2=filt.sigma2 * scale * scale,
        loglik=float(loglik), aic=float(2 * (k + 1) - 2 * loglik),
        residuals=filt.innovations * scale, series=y, unconstrained=unconstrained,
    )


def point_forecast(model: SarimaModel, h: int) -> np.ndarray:
    """Conditional-mean forecasts for steps 1..h on the fitted series' scale."""
    if h < 1:
        raise ValueError("h must be >= 1")
    order = model.order
    phi = expand_ar(model.ar, model.sar, order.period)
    theta = expand_ma(model.ma, model.sma, order.period)
    w = difference(model.series, order)
    filt = arma_filter(w - model.mean, phi, theta)
    r = len(filt.state)
    phi_full = np.zeros(r)
    phi_full[: len(phi)] = phi
    a = filt.state.copy()
    wf = np.empty(h)
    for i in range(h):
        wf[i] = a[0] + model.mean
        a = phi_full * a[0] + np.r_[a[1:], 0.0]
    poly = difference_poly(order)
    k = len(poly) - 1
    y = np.r_[model.series, np.zeros(h)]
    n = len(model.series)
    for t in range(n, n + h):
        acc = wf[t - n]
        for j in range(1, k + 1):
            acc -= poly[j] * y[t - j]
        y[t] = acc
    return y[n:]


def model_from_coefficients(series, order: SarimaOrder, *, ar=(), ma=(), sar=(), sma=(),
                            mean: float = 0.0, include_mean: bool | None = None) -> SarimaModel:
    """Build a model with given coefficients (no estimation); likelihood and
    residuals are evaluated on ``series``."""
    y = np.asarray(series, float)
    if include_mean is None:
        include_mean = order.d + order.D == 0 and mean != 0.0
    ar, ma, sar, sma = (np.asarray(c, float) for c in (ar, ma, sar, sma))
    if (len(ar), len(ma), len(sar), len(sma)) != (order.p, order.q, order.P, order.Q):
        raise ValueError("coefficient lengths do not match the order")
    w = difference(y, order)
    filt = arma_filter(w - mean, expand_ar(ar, sar, order.period),
                       expand_ma(ma, sma, order.period))
    k = order.n_arma + int(include_mean)
    layout = _Layout(order, include_mean)
    return SarimaModel(order=order, ar=ar, ma=ma, sar=sar, sma=sma, mean=float(mean),
                       include_mean=include_mean, sigma2=filt.sigma2, loglik=filt.loglik,
                       aic=2 * (k + 1) - 2 * filt.loglik, residuals=filt.innovations,
                       series=y, unconstrained=layout.unconstrain(mean, ar, ma, sar, sma))


def grid_orders(period: int, d: int, D: int) -> list[SarimaOrder]:
    seasonal = period > 1
    out = []
    for p, q in itertools.product(range(MAX_P + 1), range(MAX_Q + 1)):
        for P, Q in itertools.product(range(MAX_SP + 1) if seasonal else [0],
                                      range(MAX_SQ + 1) if seasonal else [0]):
            out.append(SarimaOrder(p, d, q, P, D if seasonal else 0, Q, period))
    return out


def _rank_key(model: SarimaModel):
    o = model.order
    return (round(model.aic, 9), o.n_arma, (o.p, o.q, o.P, o.Q))


def auto_sarima(series, period: int, *, d: int | None = None, D: int | None = None) -> SarimaModel:
    """Select (p, q, P, Q) by AIC over the full grid with d and D fixed by
    unit-root tests (seasonal differencing decided first)."""
    from htsrecon.forecast.unitroot import estimate_D, estimate_d

    y = np.asarray(series, float)
    if D is None:
        D = estimate_D(y, period) if period > 1 and len(y) >= 4 * period else 0
    if d is None:
        yd = difference(y, SarimaOrder(D=D, period=period)) if D else y
        if len(yd) < 20:
            raise InsufficientDataError(
                f"choosing d needs 20 observations after seasonal differencing, got {len(yd)}")
        d = estimate_d(yd)
    best = None
    failures = []
    for order in grid_orders(period, d, D):
        try:
            model = fit_sarima(y, order)
        except (InsufficientDataError, ConvergenceError, np.linalg.LinAlgError) as exc:
            failures.append((order, exc))
            continue
        if best is None or _rank_key(model) < _rank_key(best):
            best = model
    if best is None:
        raise ConvergenceError(
            f"no grid point could be fitted for period {period} ({len(failures)} failures; "
            f"first: {failures[0][1] if failures else 'n/a'})")
    return best

"""Cleaning of raw sales series: negative corrections, outliers, Box-Cox."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from statsmodels.tsa.seasonal import STL

LAMBDA_BOUNDS = (-1.0, 2.0)
IQR_FACTOR = 3.0
SEASONAL_WINDOW = 13
INNER_ITER = 2
OUTER_ITER = 5
# |lambda| below this is treated as the log transform
LAMBDA_EPS = 1e-12


class UnrepairableYearError(ValueError):
    pass


class DegenerateSeriesError(ValueError):
    pass


def _years(calendar) -> np.ndarray:
    cal = np.asarray(calendar)
    if np.issubdtype(cal.dtype, np.datetime64):
        return cal.astype("datetime64[Y]").astype(int) + 1970
    return np.array([int(str(c)[:4]) for c in cal])


def _interpolate(values: np.ndarray, bad: np.ndarray) -> np.ndarray:
    """Linear interpolation over ``bad`` positions from the nearest good ones;
    constant extension at the ends."""
    out = values.copy()
    good = np.flatnonzero(~bad)
    if not len(good):
        raise ValueError("no valid values to interpolate from")
    idx = np.flatnonzero(bad)
    out[idx] = np.interp(idx, good, values[good])
    return out


def repair_negatives(series, calendar) -> np.ndarray:
    """Replace negative values by interpolation of their neighbours, then
    rescale each affected calendar year so its total is unchanged.

    Absent (NaN) months are left untouched and ignored.
    """
    y = np.asarray(series, float)
    years = _years(calendar)
    if len(years) != len(y):
        raise ValueError("calendar and series lengths differ")
    obs = ~np.isnan(y)
    neg = obs & (y < 0)
    if not neg.any():
        return y.copy()
    out = y.copy()
    idx = np.flatnonzero(obs)
    out[idx] = _interpolate(y[idx], neg[idx])
    for year in np.unique(years[neg]):
        sel = (years == year) & obs
        target = y[sel].sum()
        if not target > 0:
            raise UnrepairableYearError(
                f"year {year}: original total {target:g} is not positive; cannot rescale")
        current = out[sel].sum()
        if not current > 0:
            raise UnrepairableYearError(f"year {year}: interpolated values sum to zero")
        out[sel] *= target / current
    return out


@dataclass(frozen=True)
class StlDecomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    period: int


def trend_window(period: int, seasonal: int = SEASONAL_WINDOW) -> int:
    """Smallest odd integer >= 1.5 period / (1 - 1.5 / seasonal)."""
    w = math.ceil(1.5 * period / (1.0 - 1.5 / seasonal) - 1e-12)
    w += 1 - w % 2
    return max(w, 3)


def stl_decompose(series, period: int, *, robust: bool = True, seasonal: int = SEASONAL_WINDOW,
                  trend: int | None = None, inner_iter: int = INNER_ITER,
                  outer_iter: int = OUTER_ITER) -> StlDecomposition:
    """STL decomposition with the seasonal part centred on each full cycle.

    Per-cycle means of the loess seasonal are moved into the trend (a
    trailing partial cycle reuses the last full cycle's shift). The remainder
    is the input minus trend and seasonal.
    """
    y = np.asarray(series, float)
    if period < 2:
        raise ValueError("period must be at least 2")
    if len(y) < 2 * period:
        raise ValueError(f"series of length {len(y)} is too short for period {period}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    if trend is None:
        trend = trend_window(period, seasonal)
    if trend <= period:
        trend = period + 1 + period % 2
    res = STL(y, period=period, seasonal=seasonal, trend=trend, robust=robust).fit(
        inner_iter=inner_iter, outer_iter=outer_iter if robust else 0)
    seas = np.asarray(res.seasonal, float).copy()
    tr = np.asarray(res.trend, float).copy()
    full = len(y) // period
    shift = 0.0
    for c in range(full):
        sl = slice(c * period, (c + 1) * period)
        shift = seas[sl].mean()
        seas[sl] -= shift
        tr[sl] += shift
    if full * period < len(y):
        seas[full * period:] -= shift
        tr[full * period:] += shift
    return StlDecomposition(tr, seas, y - (tr + seas), period)


def iqr_fences(x, factor: float = IQR_FACTOR) -> tuple[float, float]:
    q1, q3 = np.percentile(x, [25.0, 75.0])
    iqr = q3 - q1
    return float(q1 - factor * iqr), float(q3 + factor * iqr)


def repair_outliers(series, period: int, **stl_kw) -> tuple[np.ndarray, np.ndarray]:
    """Flag points whose STL remainder falls outside the 3 IQR fences and
    replace them by linear interpolation of the nearest unflagged values."""
    y = np.asarray(series, float)
    dec = stl_decompose(y, period, **stl_kw)
    lo, hi = iqr_fences(dec.remainder)
    flagged = (dec.remainder < lo) | (dec.remainder > hi)
    idx = np.flatnonzero(flagged)
    if not len(idx):
        return y.copy(), idx
    return _interpolate(y, flagged), idx


@dataclass(frozen=True)
class BoxCoxParams:
    lmbda: float
    shift: float = 0.0


def boxcox_shift(series) -> float:
    lo = float(np.min(series))
    return 0.0 if lo > 0 else abs(lo) + 1.0


def boxcox_transform(series, params: BoxCoxParams) -> np.ndarray:
    z = np.asarray(series, float) + params.shift
    if np.any(z <= 0):
        raise ValueError("Box-Cox needs strictly positive shifted values")
    if abs(params.lmbda) < LAMBDA_EPS:
        return np.log(z)
    # expm1 keeps precision when lambda is small
    return np.expm1(params.lmbda * np.log(z)) / params.lmbda


def boxcox_inverse(values, params: BoxCoxParams) -> np.ndarray:
    """Inverse transform. Values outside the range of the forward map are
    clamped to its boundary: a shifted value of 0 when lambda > 0 and +inf
    when lambda < 0."""
    x = np.asarray(values, float)
    lam = params.lmbda
    if abs(lam) < LAMBDA_EPS:
        z = np.exp(x)
    else:
        lx = lam * x
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            z = np.exp(np.log1p(np.maximum(lx, -1.0)) / lam)
    return z - params.shift


def boxcox_loglik(lmbda: float, logz: np.ndarray) -> float:
    """Profile log-likelihood of lambda given log(y + shift)."""
    n = len(logz)
    if abs(lmbda) < LAMBDA_EPS:
        x = logz
    else:
        x = np.expm1(lmbda * logz) / lmbda
    var = np.var(x)
    if not var > 0:
        return -np.inf
    return float(-0.5 * n * np.log(var) + (lmbda - 1.0) * logz.sum())


def boxcox_fit(series, bounds: tuple[float, float] = LAMBDA_BOUNDS, grid: int = 61) -> BoxCoxParams:
    """Maximize the profile likelihood on a grid, then refine by bounded
    Brent search around the best grid point."""
    y = np.asarray(series, float)
    y = y[np.isfinite(y)]
    if not len(y):
        raise ValueError("empty series")
    if np.ptp(y) == 0:
        raise DegenerateSeriesError("all values are identical; the Box-Cox likelihood is flat")
    shift = boxcox_shift(y)
    logz = np.log(y + shift)
    lo, hi = bounds
    pts = np.linspace(lo, hi, grid)
    ll = np.array([boxcox_loglik(p, logz) for p in pts])
    i = int(np.argmax(ll))
    a, b = pts[max(i - 1, 0)], pts[min(i + 1, grid - 1)]
    res = optimize.minimize_scalar(lambda p: -boxcox_loglik(p, logz), bounds=(a, b),
                                   method="bounded", options={"xatol": 1e-10})
    lam = float(res.x) if -res.fun >= ll[i] else float(pts[i])
    return BoxCoxParams(lam, shift)

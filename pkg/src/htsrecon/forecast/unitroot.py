"""Differencing-order tests: KPSS and ADF for d, OCSB for D."""
from __future__ import annotations

import math
import warnings

import numpy as np
from statsmodels.tools.sm_exceptions import InterpolationWarning
from statsmodels.tsa.stattools import adfuller, kpss

MAX_D = 2
ALPHA = 0.05
# 5% critical value of the KPSS level-stationarity statistic
KPSS_CRIT_5 = 0.463


def kpss_lag(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** 0.25))


def adf_maxlag(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def kpss_stationary(x: np.ndarray) -> bool:
    """True when level stationarity is not rejected at 5%."""
    if np.ptp(x) == 0:
        return True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InterpolationWarning)
        stat, *_ = kpss(x, regression="c", nlags=kpss_lag(len(x)))
    return stat <= KPSS_CRIT_5


def adf_stationary(x: np.ndarray) -> bool:
    """True when the unit-root null is rejected at 5%."""
    if np.ptp(x) == 0:
        return True
    n = len(x)
    maxlag = min(adf_maxlag(n), n // 2 - 2)
    pvalue = adfuller(x, maxlag=max(maxlag, 0), regression="c", autolag="AIC")[1]
    return pvalue < ALPHA


def _order_by(test, x: np.ndarray) -> int:
    d = 0
    while d < MAX_D and len(x) > 12 and not test(x):
        x = np.diff(x)
        d += 1
    return d


def estimate_d(series) -> int:
    """Non-seasonal differencing order: the larger of the KPSS- and
    ADF-implied orders, capped at 2."""
    x = np.asarray(series, float)
    if len(x) < 20:
        raise ValueError(f"estimate_d needs at least 20 observations, got {len(x)}")
    return max(_order_by(kpss_stationary, x), _order_by(adf_stationary, x))


def ocsb_critical_value(period: int) -> float:
    """5% critical value of the OCSB seasonal t-statistic as a smooth function
    of the period (fit to the published simulation table)."""
    lm = math.log(period) - 0.7656451
    return -0.2937411 * math.exp(-0.2850853 * lm - 0.05983644 * lm * lm) - 1.652202


def _lag(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if k < len(x):
        out[k:] = x[: len(x) - k]
    return out


def _ols(y: np.ndarray, X: np.ndarray):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    n, k = X.shape
    rss = float(resid @ resid)
    sigma2 = rss / max(n - k, 1)
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    return beta, np.sqrt(np.maximum(np.diag(cov), 0.0)), rss


def ocsb_statistic(series, period: int, max_lag: int = 3) -> float:
    """t-statistic on the seasonal regressor of the OCSB auxiliary regression

        D1 Dm y_t = b1 Dm y_{t-1} + b2 D1 y_{t-m} + sum_i a_i D1 Dm y_{t-i} + e_t

    with the augmentation order chosen by AIC on a common sample."""
    y = np.asarray(series, float)
    m = period
    dm = np.full(len(y), np.nan)
    dm[m:] = y[m:] - y[:-m]
    d1 = np.full(len(y), np.nan)
    d1[1:] = np.diff(y)
    dep = np.full(len(y), np.nan)
    dep[m + 1 :] = dm[m + 1 :] - dm[m:-1]
    z4 = _lag(dm, 1)
    z5 = _lag(d1, m)
    lags = [_lag(dep, i) for i in range(1, max_lag + 1)]
    full = np.column_stack([dep, z4, z5] + lags)
    rows = np.all(np.isfinite(full), axis=1)
    best = None
    for k in range(max_lag + 1):
        X = full[rows][:, 1 : 3 + k]
        yy = full[rows][:, 0]
        beta, se, rss = _ols(yy, X)
        n = len(yy)
        aic = n * math.log(max(rss / n, 1e-300)) + 2 * X.shape[1]
        if best is None or aic < best[0]:
            best = (aic, beta[1] / se[1] if se[1] > 0 else -np.inf)
    return float(best[1])


def estimate_D(series, period: int) -> int:
    """Seasonal differencing order in {0, 1} from the OCSB test."""
    if period == 1:
        return 0
    x = np.asarray(series, float)
    if len(x) < 4 * period:
        raise ValueError(
            f"estimate_D needs at least {4 * period} observations for period {period}, got {len(x)}")
    if np.ptp(x) == 0:
        return 0
    stat = ocsb_statistic(x, period)
    return int(stat > ocsb_critical_value(period))

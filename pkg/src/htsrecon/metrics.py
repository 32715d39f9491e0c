"""Forecast accuracy measures and their volume-weighted aggregation."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

SFB_WINDOW = 6


def sfb(forecast, actual, T: int = SFB_WINDOW) -> float:
    """Signed forecast bias in percent over the trailing ``T`` periods."""
    f = np.asarray(forecast, float)
    a = np.asarray(actual, float)
    if T < 1 or len(f) < T or len(a) < T:
        raise ValueError(f"need at least T={T} forecast and actual values")
    f, a = f[-T:], a[-T:]
    denom = a.sum()
    if denom == 0:
        raise ZeroDivisionError("actual values sum to zero over the SFB window")
    return float(100.0 * (f - a).sum() / denom)


def windowed_sfb(forecast, actual, T: int = SFB_WINDOW) -> float:
    """Mean SFB over consecutive non-overlapping ``T``-month windows.

    A 24-month horizon gives four windows. A trailing partial window is
    ignored, and windows whose actual total is zero are skipped.
    """
    f = np.asarray(forecast, float)
    a = np.asarray(actual, float)
    if len(f) != len(a):
        raise ValueError("forecast and actual lengths differ")
    vals = []
    for start in range(0, len(f) - T + 1, T):
        if a[start:start + T].sum() != 0:
            vals.append(sfb(f[start:start + T], a[start:start + T], T))
    if not vals:
        raise ZeroDivisionError("no SFB window with a nonzero actual total")
    return float(np.mean(vals))


def rmsse(train, actual, forecast) -> float:
    """Root mean squared error scaled by the in-sample one-step naive MSE."""
    y = np.asarray(train, float)
    a = np.asarray(actual, float)
    f = np.asarray(forecast, float)
    if len(y) < 2:
        raise ValueError("training series needs at least two values")
    if a.shape != f.shape or a.size == 0:
        raise ValueError("actual and forecast must be nonempty and of equal length")
    scale = np.sum(np.diff(y) ** 2) / (len(y) - 1)
    if scale == 0:
        raise ZeroDivisionError("training series is constant; RMSSE is undefined")
    return float(np.sqrt(np.mean((a - f) ** 2) / scale))


def smape(actual, forecast) -> float:
    """Symmetric MAPE in percent; 0/0 terms count as zero."""
    a = np.asarray(actual, float)
    f = np.asarray(forecast, float)
    if a.shape != f.shape or a.size == 0:
        raise ValueError("actual and forecast must be nonempty and of equal length")
    num = np.abs(f - a)
    den = np.abs(a) + np.abs(f)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(200.0 * terms.sum() / a.size)


def weighted_aggregate(values, weights) -> float:
    """Sum of w_i |v_i| divided by the sum of w_i."""
    v = np.abs(np.asarray(values, float))
    w = np.asarray(weights, float)
    if v.shape != w.shape:
        raise ValueError("values and weights must align")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ZeroDivisionError("weights sum to zero")
    return float(np.sum(w * v) / total)


def series_weights(panel_values) -> np.ndarray:
    """Per-series weight: the sum of all observed values, floored at zero."""
    return np.maximum(np.nansum(np.asarray(panel_values, float), axis=1), 0.0)


@dataclass
class MetricReport:
    """Per-series metrics of one forecast method plus weighted aggregates."""

    labels: tuple[str, ...]
    sfb: np.ndarray
    rmsse: np.ndarray
    smape: np.ndarray
    weights: np.ndarray
    levels: Mapping[str, Sequence[int]] = field(default_factory=dict)

    def aggregate(self, metric: str, rows: Sequence[int] | None = None) -> float:
        vals = np.asarray(getattr(self, metric), float)
        idx = np.arange(len(vals)) if rows is None else np.asarray(rows, int)
        v, w = vals[idx], self.weights[idx]
        ok = np.isfinite(v)
        if not ok.any() or not w[ok].sum() > 0:
            return float("nan")
        return weighted_aggregate(v[ok], w[ok])

    def by_level(self, metric: str) -> dict[str, float]:
        out = {name: self.aggregate(metric, rows) for name, rows in self.levels.items()}
        out["overall"] = self.aggregate(metric)
        return out


def metric_report(labels, train, actual, forecast, weights, T: int = SFB_WINDOW,
                  levels: Mapping[str, Sequence[int]] | None = None) -> MetricReport:
    """Evaluate every row of ``forecast`` (m x h) against ``actual``.

    ``train`` is a list of per-series training vectors (NaN-free) used as
    the RMSSE scale. Metrics that are undefined for a series are NaN.
    """
    m = len(labels)
    out = {k: np.full(m, np.nan) for k in ("sfb", "rmsse", "smape")}
    for i in range(m):
        f, a = np.asarray(forecast[i], float), np.asarray(actual[i], float)
        try:
            out["sfb"][i] = windowed_sfb(f, a, T)
        except (ZeroDivisionError, ValueError):
            pass
        try:
            out["rmsse"][i] = rmsse(train[i], a, f)
        except (ZeroDivisionError, ValueError):
            pass
        out["smape"][i] = smape(a, f)
    return MetricReport(tuple(labels), out["sfb"], out["rmsse"], out["smape"],
                        np.asarray(weights, float), dict(levels or {}))

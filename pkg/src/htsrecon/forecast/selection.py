"""Rolling-origin cross-validation and seasonal-period selection."""
from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from htsrecon.forecast.sarima import (ConvergenceError, InsufficientDataError, SarimaModel,
                                      auto_sarima, fit_sarima, point_forecast)
from htsrecon.metrics import smape

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = (1, 3, 6, 12)
# a candidate with more than this share of failed folds is disqualified
MAX_FAILED_SHARE = 0.5
# warm refits on CV windows only score the template order, so they stop early
REFIT_MAXITER = 30
REFIT_GTOL = 1e-3

FIT_ERRORS = (InsufficientDataError, ConvergenceError, ValueError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class CvFold:
    """Training covers indices ``0..train_end``; validation covers
    ``val_start..val_end`` (both inclusive)."""

    train_end: int
    val_start: int
    val_end: int

    @property
    def train_len(self) -> int:
        return self.train_end + 1

    @property
    def val_len(self) -> int:
        return self.val_end - self.val_start + 1


def rolling_origin_splits(n: int, min_train: int = 28, val: int = 2, step: int = 1) -> list[CvFold]:
    """Expanding-window folds; the fold count is ``(n - min_train - val) // step``.

    The last origin whose validation window would end on the final
    observation is not used.
    """
    if min_train < 1 or val < 1 or step < 1:
        raise ValueError("min_train, val and step must be positive")
    count = (n - min_train - val) // step
    if n <= min_train + val or count < 1:
        raise ValueError(
            f"no folds: n={n} must exceed min_train + val = {min_train + val}")
    folds = []
    for i in range(count):
        end = min_train - 1 + i * step
        folds.append(CvFold(end, end + 1, end + val))
    return folds


@dataclass
class PeriodScore:
    period: int
    mean_smape: float
    n_folds: int
    n_failed: int
    disqualified: bool
    model: SarimaModel | None = None


def cv_smape(series, period: int, folds: list[CvFold], *, reselect_per_fold: bool = True,
             template: SarimaModel | None = None,
             inverse: Callable[[np.ndarray], np.ndarray] | None = None) -> PeriodScore:
    """Mean validation SMAPE for one seasonal period.

    With ``reselect_per_fold`` the full order search runs on every training
    window; otherwise the order of ``template`` is kept and only the
    coefficients are re-estimated (warm-started from the template).
    """
    y = np.asarray(series, float)
    scores = []
    failed = 0
    for fold in folds:
        train = y[: fold.train_len]
        actual = y[fold.val_start: fold.val_end + 1]
        try:
            if reselect_per_fold or template is None:
                model = auto_sarima(train, period)
            else:
                model = fit_sarima(train, template.order, include_mean=template.include_mean,
                                   start=template.unconstrained, maxiter=REFIT_MAXITER,
                                   gtol=REFIT_GTOL)
            fc = point_forecast(model, fold.val_len)
        except FIT_ERRORS as exc:
            logger.debug("period %d fold %d failed: %s", period, fold.train_end, exc)
            failed += 1
            continue
        if not np.all(np.isfinite(fc)):
            failed += 1
            continue
        if inverse is not None:
            fc, actual = inverse(fc), inverse(actual)
        scores.append(smape(actual, fc))
    disq = failed > MAX_FAILED_SHARE * len(folds)
    mean = float(np.mean(scores)) if scores and not disq else float("inf")
    return PeriodScore(period, mean, len(folds), failed, disq, template)


def select_seasonal_period(series, candidates: Iterable[int] = DEFAULT_CANDIDATES, *,
                           min_train: int = 28, val: int = 2, step: int = 1,
                           reselect_per_fold: bool = True,
                           inverse: Callable[[np.ndarray], np.ndarray] | None = None,
                           ) -> tuple[int, dict[int, PeriodScore]]:
    """Pick the seasonal period with the lowest mean rolling-origin SMAPE.

    Ties go to the smaller period. ``inverse`` maps values back to the
    scale on which SMAPE is measured (e.g. an inverse Box-Cox).
    """
    cands = sorted({int(c) for c in candidates})
    if not cands or cands[0] < 1:
        raise ValueError("candidates must be a nonempty set of positive integers")
    if len(cands) == 1:
        return cands[0], {}
    y = np.asarray(series, float)
    folds = rolling_origin_splits(len(y), min_train, val, step)
    table: dict[int, PeriodScore] = {}
    for period in cands:
        template = None
        if not reselect_per_fold:
            try:
                template = auto_sarima(y, period)
            except FIT_ERRORS as exc:
                logger.debug("period %d: full-sample fit failed: %s", period, exc)
                table[period] = PeriodScore(period, float("inf"), len(folds), len(folds), True)
                continue
        table[period] = cv_smape(y, period, folds, reselect_per_fold=reselect_per_fold,
                                 template=template, inverse=inverse)
    best = min(cands, key=lambda p: (table[p].mean_smape, p))
    if not np.isfinite(table[best].mean_smape):
        raise ConvergenceError("every seasonal period candidate was disqualified")
    return best, table

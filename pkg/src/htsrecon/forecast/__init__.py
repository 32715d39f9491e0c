"""Per-series seasonal ARIMA modelling."""
from htsrecon.forecast.sarima import (ConvergenceError, InsufficientDataError, SarimaModel,
                                      SarimaOrder, auto_sarima, fit_sarima,
                                      model_from_coefficients, point_forecast)
from htsrecon.forecast.selection import CvFold, rolling_origin_splits, select_seasonal_period
from htsrecon.forecast.unitroot import estimate_D, estimate_d

__all__ = [
    "ConvergenceError", "CvFold", "InsufficientDataError", "SarimaModel", "SarimaOrder",
    "auto_sarima", "estimate_D", "estimate_d", "fit_sarima", "model_from_coefficients",
    "point_forecast", "rolling_origin_splits", "select_seasonal_period",
]

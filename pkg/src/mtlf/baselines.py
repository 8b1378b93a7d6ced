"""Sanity baselines: seasonal naive and a grid-searched Holt-Winters
multiplicative forecaster.

The Holt-Winters baseline reuses the same smoothing recursion as the hybrid
model but fits its two coefficients by grid search on one-step-ahead
in-sample error instead of gradients, so it exercises none of the
differentiation machinery and serves as an independent pipeline check.
"""

import numpy as np

from .ets import EtsParams, init_params, run_smoother
from .windowing import HORIZON

__all__ = ["seasonal_naive", "holt_winters_forecast", "GRID"]

GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


def seasonal_naive(series):
    """Repeat the last observed year, month-aligned."""
    if len(series) < 12:
        raise ValueError(f"series {series.id}: need at least 12 months")
    return np.array(series.values[-12:], dtype=float)


def holt_winters_forecast(series, grid=GRID):
    """Forecast 12 months ahead with grid-fit smoothing coefficients.

    Coefficients are chosen to minimize the in-sample squared error of the
    one-step-ahead prediction l_{t-1} * s_t; the forecast is the last level
    carried forward times the horizon seasonals.
    """
    if len(series) < 24:
        raise ValueError(f"series {series.id}: need at least 24 months")
    y = series.values
    init = init_params(series)
    logit = lambda p: float(np.log(p / (1.0 - p)))
    best = None
    best_sse = np.inf
    for alpha in grid:
        for beta in grid:
            params = EtsParams(
                alpha_raw=np.asarray(logit(alpha)),
                beta_raw=np.asarray(logit(beta)),
                init_season_raw=init.init_season_raw,
            )
            trace = run_smoother(series, params)
            levels = np.asarray(trace.levels)
            seasonals = np.asarray(trace.seasonals)
            prior_level = np.concatenate(([trace.initial_level], levels[:-1]))
            sse = float(np.sum((prior_level * seasonals[: len(y)] - y) ** 2))
            if sse < best_sse:
                best_sse = sse
                best = trace
    levels = np.asarray(best.levels)
    seasonals = np.asarray(best.seasonals)
    return levels[-1] * seasonals[len(y) : len(y) + HORIZON]

"""Rolling-window pattern construction and its inverse.

Each training sample pairs a 12-month input window with the following
12-month output window.  Every element is reduced to a dimensionless pattern
value

    x_t = log( y_t / (l* . s_t) )

where l* is the level at the last input-window position and s_t the
element's own seasonal component.  Forecasts are unwound with the inverse
transform

    y_t = exp(x_t) . l* . s_t

Because the level and seasonal sequences are re-fit every epoch, the sample
values built here change as the smoothing parameters learn: the training set
is dynamic.  When traces are tape-backed the pattern values stay on the
tape, so gradients reach the smoothing parameters through inputs and targets
alike.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import log, take

__all__ = [
    "TrainingSample",
    "TrainingSet",
    "preprocess_value",
    "build_training_set",
    "build_series_samples",
    "forecast_inputs",
    "postprocess_forecast",
    "WINDOW",
    "HORIZON",
]

WINDOW = 12
HORIZON = 12


@dataclass
class TrainingSample:
    series_id: str
    t_anchor: int  # 0-based index of the last input-window element
    x_in: object  # 12-vector
    x_out: object  # 12-vector
    level_star: object  # scalar, energy units
    horizon_seasonals: object  # 12-vector covering the output window


@dataclass
class TrainingSet:
    """Samples grouped per series, chronological within each series."""

    per_series: dict

    def __iter__(self):
        for samples in self.per_series.values():
            yield from samples

    def __len__(self):
        return sum(len(v) for v in self.per_series.values())


def preprocess_value(y, level_star, seasonal):
    """Pattern value of a single observation."""
    if y <= 0 or level_star <= 0 or seasonal <= 0:
        raise ValueError("preprocessing requires positive value, level and seasonal")
    return float(np.log(y / (level_star * seasonal)))


def postprocess_forecast(x_hat, level_star, horizon_seasonals):
    """Unwind pattern-space forecasts back to demand units."""
    x_hat = np.asarray(x_hat, dtype=float)
    if not np.all(np.isfinite(x_hat)):
        raise ValueError("non-finite forecast pattern")
    level_star = float(level_star)
    horizon_seasonals = np.asarray(horizon_seasonals, dtype=float)
    if level_star <= 0 or np.any(horizon_seasonals <= 0):
        raise ValueError("postprocessing requires positive level and seasonals")
    return np.exp(x_hat) * level_star * horizon_seasonals


def build_series_samples(series, trace):
    """All stride-1 samples of one series given its current trace."""
    y = series.values
    n = len(y)
    if n < WINDOW + HORIZON:
        raise ValueError(f"series {series.id}: needs {WINDOW + HORIZON} months to form a sample")
    log_y = np.log(y)
    log_levels = log(trace.levels)
    log_seasonals = log(trace.seasonals)
    samples = []
    for a in range(WINDOW - 1, n - HORIZON):
        log_lstar = take(log_levels, a)
        x_in = (log_y[a - WINDOW + 1 : a + 1] - take(log_seasonals, slice(a - WINDOW + 1, a + 1))) - log_lstar
        x_out = (log_y[a + 1 : a + 1 + HORIZON] - take(log_seasonals, slice(a + 1, a + 1 + HORIZON))) - log_lstar
        samples.append(
            TrainingSample(
                series_id=series.id,
                t_anchor=a,
                x_in=x_in,
                x_out=x_out,
                level_star=take(trace.levels, a),
                horizon_seasonals=take(trace.seasonals, slice(a + 1, a + 1 + HORIZON)),
            )
        )
    return samples


def build_training_set(collection, traces):
    """Combine every series' samples into the cross-learning training set."""
    per_series = {}
    for series in collection:
        per_series[series.id] = build_series_samples(series, traces[series.id])
    return TrainingSet(per_series)


def forecast_inputs(series, trace):
    """Chronological input windows for forecasting, including the final
    window that ends at the last observation.

    Returns ``(xs, level_star, horizon_seasonals)`` where the last two apply
    to the 12 months beyond the series end.
    """
    y = series.values
    n = len(y)
    if n < WINDOW:
        raise ValueError(f"series {series.id}: needs {WINDOW} months to form an input window")
    log_y = np.log(y)
    log_levels = log(trace.levels)
    log_seasonals = log(trace.seasonals)
    xs = []
    for a in range(WINDOW - 1, n):
        log_lstar = take(log_levels, a)
        xs.append((log_y[a - WINDOW + 1 : a + 1] - take(log_seasonals, slice(a - WINDOW + 1, a + 1))) - log_lstar)
    level_star = take(trace.levels, n - 1)
    horizon_seasonals = take(trace.seasonals, slice(n, n + HORIZON))
    return xs, level_star, horizon_seasonals

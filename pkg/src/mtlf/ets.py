"""Per-series multiplicative seasonal exponential smoothing without trend.

The smoother maintains a level and a 12-month seasonal profile:

    l_t     = alpha * (y_t / s_t) + (1 - alpha) * l_{t-1}
    s_{t+12} = beta * (y_t / l_t) + (1 - beta)  * s_t

Smoothing coefficients are learned through a logistic squash and the twelve
initial seasonal components in log-space, so the effective parameters stay in
(0, 1) and (0, inf) while the raw parameters remain unconstrained and the
whole recursion stays differentiable.  When the parameters are tape
variables, the recursion is recorded on their tape and gradients flow from
any downstream loss back to all fourteen raw parameters.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Variable, exp, sigmoid, stack, take

__all__ = ["EtsParams", "EtsTrace", "init_params", "register_ets", "run_smoother"]

SEASON_LENGTH = 12


@dataclass
class EtsParams:
    """Raw (unconstrained) smoothing parameters for one series.

    Fields hold arrays during storage/optimization and tape Variables while a
    recorded recursion is being built (see :func:`register_ets`).
    """

    alpha_raw: object  # shape ()
    beta_raw: object  # shape ()
    init_season_raw: object  # shape (12,)

    def named(self):
        yield "alpha_raw", self.alpha_raw
        yield "beta_raw", self.beta_raw
        yield "init_season_raw", self.init_season_raw

    def copy(self):
        return EtsParams(
            np.array(self.alpha_raw, dtype=float),
            np.array(self.beta_raw, dtype=float),
            np.array(self.init_season_raw, dtype=float),
        )


@dataclass
class EtsTrace:
    """Level and seasonal sequences induced by one smoother run.

    ``levels`` covers t = 1..T; ``seasonals`` covers t = 1..T+12, i.e. it
    extends one full cycle past the series end, which is exactly the horizon
    the forecaster needs.
    """

    levels: object  # vector, length T
    seasonals: object  # vector, length T + 12
    initial_level: float


def init_params(series):
    """Data-driven starting point: alpha = beta = 0.5 and initial seasonal
    components from first-two-years month-over-mean ratios."""
    y = series.values
    if len(y) < 2 * SEASON_LENGTH:
        raise ValueError(f"series {series.id}: need at least 24 months to initialize")
    head = y[: 2 * SEASON_LENGTH]
    overall = head.mean()
    monthly = head.reshape(2, SEASON_LENGTH).mean(axis=0)
    return EtsParams(
        alpha_raw=np.zeros(()),
        beta_raw=np.zeros(()),
        init_season_raw=np.log(monthly / overall),
    )


def register_ets(tape, params):
    """Copy raw parameters onto a tape as differentiable leaves."""
    return EtsParams(
        alpha_raw=tape.leaf(params.alpha_raw),
        beta_raw=tape.leaf(params.beta_raw),
        init_season_raw=tape.leaf(params.init_season_raw),
    )


def run_smoother(series, params):
    """Run the smoothing recursion over a full series.

    With array parameters this is a plain numpy evaluation; with registered
    tape leaves (:func:`register_ets`) every step lands on the tape.  The
    initial level is the mean of the first seasonal cycle, a constant that
    receives no gradient.
    """
    y = series.values
    n = len(y)
    if n < SEASON_LENGTH:
        raise ValueError(f"series {series.id}: need at least {SEASON_LENGTH} months")
    recorded = isinstance(params.alpha_raw, Variable)

    alpha = sigmoid(params.alpha_raw)
    beta = sigmoid(params.beta_raw)
    season0 = exp(params.init_season_raw)
    if recorded:
        seasonals = [take(season0, i) for i in range(SEASON_LENGTH)]
    else:
        alpha = float(alpha)
        beta = float(beta)
        seasonals = list(np.asarray(season0, dtype=float))
    keep_alpha = 1.0 - alpha
    keep_beta = 1.0 - beta

    initial_level = float(y[:SEASON_LENGTH].mean())
    level = initial_level
    levels = []
    for t in range(n):
        yt = float(y[t])
        s_t = seasonals[t]
        level = alpha * (yt / s_t) + keep_alpha * level
        seasonals.append(beta * (yt / level) + keep_beta * s_t)
        levels.append(level)
    return EtsTrace(
        levels=stack(levels),
        seasonals=stack(seasonals),
        initial_level=initial_level,
    )

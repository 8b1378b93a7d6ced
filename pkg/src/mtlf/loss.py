"""Penalized pinball loss in pattern space.

The pinball loss

    L = (x - x_hat) * tau        if x >= x_hat
        (x_hat - x) * (1 - tau)  if x_hat > x

penalizes under- and over-forecasts asymmetrically; tau < 0.5 leans against
over-forecasting.  At the kink (x == x_hat) the subgradient of the first
branch is used.

The level-wiggliness penalty measures the curvature of a level sequence in
log space: with d_t = log(l_{t+1} / l_t) and e_t = d_{t+1} - d_t, the
penalty is 2 / (T - 2) * sum(e_t^2).  Constant and geometric (constant
growth) level sequences score exactly zero.  Squaring keeps the penalty a
true wiggliness measure, bounded below by zero.

The total loss averages every pinball component in a batch and adds
``lam`` times the mean per-series penalty; both terms live on the same tape
so gradients reach the network weights and the smoothing parameters (the
latter through inputs, targets and the penalty alike).
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Variable, addn, log, take, vmean, vsum, where

__all__ = ["LossConfig", "pinball", "level_penalty", "total_loss"]


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.4
    lam: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")


def pinball(x, x_hat, tau):
    """Asymmetric deviation loss; elementwise over arrays or tape variables."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    diff = x - x_hat
    if isinstance(diff, Variable):
        return where(diff.value >= 0.0, diff * tau, -diff * (1.0 - tau))
    diff = np.asarray(diff, dtype=float)
    return np.where(diff >= 0.0, diff * tau, -diff * (1.0 - tau))


def level_penalty(levels):
    """Mean squared second difference of log levels, scaled by 2."""
    n = len(levels)
    if n < 3:
        raise ValueError("level penalty needs at least 3 points")
    log_l = log(levels)
    d = take(log_l, slice(1, n)) - take(log_l, slice(0, n - 1))
    e = take(d, slice(1, n - 1)) - take(d, slice(0, n - 2))
    return 2.0 * vmean(e * e)


def total_loss(pinball_terms, level_curves, cfg):
    """Batch loss: mean of all pinball components plus the weighted mean
    per-series level penalty."""
    pinball_terms = list(pinball_terms)
    level_curves = list(level_curves)
    if not pinball_terms:
        raise ValueError("empty batch")
    n_components = 0
    sums = []
    for term in pinball_terms:
        n_components += term.value.size if isinstance(term, Variable) else np.size(term)
        sums.append(vsum(term))
    mean_pinball = addn(sums) / n_components
    if not level_curves:
        raise ValueError("at least one level curve is required")
    mean_penalty = addn([level_penalty(lv) for lv in level_curves]) / len(level_curves)
    return mean_pinball + cfg.lam * mean_penalty

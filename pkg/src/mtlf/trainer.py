"""Joint gradient-descent training of smoothing parameters and network weights.

One optimization loop owns everything: per mini-batch of series it records a
fresh tape, re-runs each series' smoothing recursion (so the training
patterns always reflect the current smoothing parameters), builds the
rolling-window samples, unrolls the network statefully per series,
accumulates the penalized pinball loss, and applies one clipped gradient
step to the shared network weights and the batch series' smoothing
parameters.

The default update is adaptive-moment gradient descent (plain SGD at the
published learning rate is brittle for a recurrent unroll of this depth; the
switch ``optimizer="sgd"`` restores it).  At the end of every epoch each
series' 12-month forecast is snapshotted; downstream ensembling averages the
most recent snapshots to calm the stochastic trajectory of the optimizer.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .ets import EtsParams, init_params, register_ets, run_smoother
from .loss import LossConfig, pinball, total_loss
from .network import (
    forward_sequence,
    init_weights,
    network_from_dict,
    network_to_dict,
    register_network,
)
from .windowing import build_series_samples, forecast_inputs, postprocess_forecast

__all__ = [
    "TrainConfig",
    "TrainedModel",
    "TrainingDiverged",
    "train",
    "forecast",
    "snapshot_average",
    "save_model",
    "load_model",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 8  # series per mini-batch
    snapshot_window: int = 5  # how many recent epoch forecasts to average
    m: int = 40
    gradient_clip: float = 10.0  # global norm; 0 disables
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 1 <= self.snapshot_window <= self.epochs:
            raise ValueError("snapshot window must lie in [1, epochs]")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.m < 1:
            raise ValueError("state length m must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.gradient_clip < 0:
            raise ValueError("gradient clip must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainedModel:
    network: object  # NetworkParams
    ets: dict  # series id -> EtsParams
    snapshots: dict  # series id -> [12-vector per epoch]

    def forecast(self, series):
        if series.id not in self.ets:
            raise KeyError(f"series {series.id!r} unknown to this model")
        return forecast(self.network, self.ets[series.id], series)


class _Adam:
    """Per-parameter adaptive moments; step counts are tracked per key so
    smoothing parameters updated only when their series is in the batch keep
    correct bias correction."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def step(self, key, param, grad):
        m = self._m.get(key)
        if m is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        else:
            v = self._v[key]
        t = self._t.get(key, 0) + 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._m[key] = m
        self._v[key] = v
        self._t[key] = t
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, key, param, grad):
        param -= self.lr * grad


def _make_optimizer(cfg):
    return _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)


def _clip_global_norm(grads, clip):
    if clip <= 0:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > clip:
        scale = clip / norm
        grads = [g * scale for g in grads]
    return grads


def _batch_step(net, ets_table, batch_series, cfg, optimizer):
    """One recorded forward/backward/update over a mini-batch of series.

    Returns the batch loss value.  Only the smoothing parameters of series in
    the batch receive gradient; the network weights always do.
    """
    tape = Tape()
    reg_net = register_network(tape, net)
    registered = []
    pinball_terms = []
    level_curves = []
    for series in batch_series:
        reg = register_ets(tape, ets_table[series.id])
        registered.append((series.id, reg))
        trace = run_smoother(series, reg)
        samples = build_series_samples(series, trace)
        preds = forward_sequence([s.x_in for s in samples], reg_net)
        for sample, pred in zip(samples, preds):
            pinball_terms.append(pinball(sample.x_out, pred, cfg.loss.tau))
        level_curves.append(trace.levels)
    loss_var = total_loss(pinball_terms, level_curves, cfg.loss)
    loss_value = float(loss_var.value)
    if not np.isfinite(loss_value):
        return loss_value  # caller raises with epoch/batch context
    grad_map = backward(tape, loss_var)

    keys = []
    params = []
    grads = []
    for (name, arr), (_, var) in zip(net.named(), reg_net.named()):
        keys.append(f"net.{name}")
        params.append(arr)
        grads.append(grad_map[var])
    for sid, reg in registered:
        store = ets_table[sid]
        for (name, arr), (_, var) in zip(store.named(), reg.named()):
            keys.append(f"ets.{sid}.{name}")
            params.append(arr)
            grads.append(grad_map[var])
    grads = _clip_global_norm(grads, cfg.gradient_clip)
    for key, param, grad in zip(keys, params, grads):
        optimizer.step(key, param, grad)
    return loss_value


def forecast(network, ets_params, series):
    """12-month forecast from the current parameters (no recording).

    The smoother is re-run, all input windows are fed statefully, and the
    final window's prediction (whose input ends at the last observation) is
    unwound with the last level and the horizon seasonals.
    """
    trace = run_smoother(series, ets_params)
    xs, level_star, horizon_seasonals = forecast_inputs(series, trace)
    preds = forward_sequence(xs, network)
    return postprocess_forecast(preds[-1], float(level_star), np.asarray(horizon_seasonals))


def snapshot_average(forecasts, window):
    """Componentwise mean of the last ``window`` epoch forecasts."""
    forecasts = list(forecasts)
    if window < 1:
        raise ValueError("snapshot window must be at least 1")
    if len(forecasts) < window:
        raise ValueError(f"need at least {window} snapshots, have {len(forecasts)}")
    return np.mean(np.stack(forecasts[-window:]), axis=0)


def train(collection, cfg, log=None):
    """Run the joint optimization over a collection.

    ``log``, if given, receives ``epoch,batch,loss`` CSV lines.  Training is
    bit-deterministic for a fixed config: weight init, shuffling and updates
    all derive from ``cfg.seed``.
    """
    series_list = list(collection)
    for s in series_list:
        if len(s) < 24:
            raise ValueError(f"series {s.id}: too short to train on ({len(s)} < 24 months)")

    root = np.random.SeedSequence(cfg.seed)
    init_seq, shuffle_seq = root.spawn(2)
    net = init_weights(cfg.m, int(init_seq.generate_state(1, np.uint64)[0]))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    ets_table = {s.id: init_params(s) for s in series_list}
    optimizer = _make_optimizer(cfg)
    snapshots = {s.id: [] for s in series_list}

    if log is not None:
        log.write("epoch,batch,loss\n")
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(series_list))
        for batch_no, lo in enumerate(range(0, len(order), cfg.batch_size), start=1):
            batch = [series_list[i] for i in order[lo : lo + cfg.batch_size]]
            loss_value = _batch_step(net, ets_table, batch, cfg, optimizer)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}: {loss_value}"
                )
            if log is not None:
                log.write(f"{epoch},{batch_no},{loss_value!r}\n")
        for s in series_list:
            try:
                snapshots[s.id].append(forecast(net, ets_table[s.id], s))
            except ValueError as exc:
                raise TrainingDiverged(
                    f"non-finite forecast at epoch {epoch} for series {s.id}: {exc}"
                ) from exc
    return TrainedModel(network=net, ets=ets_table, snapshots=snapshots)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_FORMAT = "hybrid-model"
_VERSION = 1


def save_model(model, path):
    payload = {
        "format": _FORMAT,
        "version": _VERSION,
        "network": network_to_dict(model.network),
        "ets": {
            sid: {
                "alpha_raw": float(p.alpha_raw),
                "beta_raw": float(p.beta_raw),
                "init_season_raw": np.asarray(p.init_season_raw).tolist(),
            }
            for sid, p in model.ets.items()
        },
        "snapshots": {
            sid: [np.asarray(f).tolist() for f in snaps] for sid, snaps in model.snapshots.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _FORMAT:
        raise ValueError(f"not a {_FORMAT} checkpoint")
    if payload.get("version") != _VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    ets = {
        sid: EtsParams(
            alpha_raw=np.asarray(p["alpha_raw"], dtype=float),
            beta_raw=np.asarray(p["beta_raw"], dtype=float),
            init_season_raw=np.asarray(p["init_season_raw"], dtype=float),
        )
        for sid, p in payload["ets"].items()
    }
    snapshots = {
        sid: [np.asarray(f, dtype=float) for f in snaps]
        for sid, snaps in payload["snapshots"].items()
    }
    return TrainedModel(network=network_from_dict(payload["network"]), ets=ets, snapshots=snapshots)

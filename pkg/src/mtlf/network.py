"""Four-layer residual dilated LSTM with a linear output unit.

Layer 1 is a standard LSTM cell.  Layers 2-4 are residual dilated cells with
dilations 3, 6 and 12: each reads its own state from ``d`` steps back and
adds the lower layer's output to the squashed cell state before the output
gate:

    c_t = f (*) c_{t-d} + i (*) g
    h_t = o (*) ( tanh(c_t) + h_lower )

There are no peephole connections and the residual shortcut is not linearly
transformed (state sizes match across layers).  A final linear unit maps the
top hidden state to the 12-component forecast pattern.

Input windows are 12-vectors; the network is unrolled statefully over a
series' chronological windows, with per-layer ring buffers holding the last
``d`` (hidden, cell) pairs.  Missing history (t - d < 0) reads as zeros.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Variable, matvec, sigmoid, tanh

__all__ = [
    "LayerWeights",
    "NetworkParams",
    "RecurrentState",
    "lstm_cell",
    "rdlstm_cell",
    "forward_sequence",
    "init_weights",
    "register_network",
    "save_network",
    "load_network",
    "network_to_dict",
    "network_from_dict",
    "DILATIONS",
    "INPUT_LEN",
    "OUTPUT_LEN",
]

DILATIONS = (1, 3, 6, 12)
INPUT_LEN = 12
OUTPUT_LEN = 12

_GATES = ("f", "i", "g", "o")


@dataclass
class LayerWeights:
    """Input weights W, recurrent weights V and biases b of one cell."""

    W_f: object
    W_i: object
    W_g: object
    W_o: object
    V_f: object
    V_i: object
    V_g: object
    V_o: object
    b_f: object
    b_i: object
    b_g: object
    b_o: object

    def named(self):
        for kind in ("W", "V", "b"):
            for gate in _GATES:
                name = f"{kind}_{gate}"
                yield name, getattr(self, name)


@dataclass
class NetworkParams:
    layers: list  # 4 LayerWeights
    out_W: object  # (12, m)
    out_b: object  # (12,)
    m: int
    dilations: tuple = DILATIONS

    def named(self):
        for li, layer in enumerate(self.layers):
            for name, arr in layer.named():
                yield f"layer{li}.{name}", arr
        yield "out.W", self.out_W
        yield "out.b", self.out_b


def init_weights(m, seed):
    """Uniform (-1/sqrt(m), 1/sqrt(m)) weights, forget-gate bias 1, other
    biases 0; deterministic per seed."""
    if m < 1:
        raise ValueError("state length m must be at least 1")
    rng = np.random.default_rng(seed)
    lim = 1.0 / np.sqrt(m)
    u = lambda *shape: rng.uniform(-lim, lim, shape)
    layers = []
    for li in range(4):
        nin = INPUT_LEN if li == 0 else m
        layers.append(
            LayerWeights(
                W_f=u(m, nin), W_i=u(m, nin), W_g=u(m, nin), W_o=u(m, nin),
                V_f=u(m, m), V_i=u(m, m), V_g=u(m, m), V_o=u(m, m),
                b_f=np.ones(m), b_i=np.zeros(m), b_g=np.zeros(m), b_o=np.zeros(m),
            )
        )
    return NetworkParams(layers=layers, out_W=u(OUTPUT_LEN, m), out_b=np.zeros(OUTPUT_LEN), m=m)


def register_network(tape, params):
    """Copy all weight arrays onto a tape as differentiable leaves."""
    layers = [
        LayerWeights(**{name: tape.leaf(arr) for name, arr in layer.named()})
        for layer in params.layers
    ]
    return NetworkParams(
        layers=layers,
        out_W=tape.leaf(params.out_W),
        out_b=tape.leaf(params.out_b),
        m=params.m,
        dilations=params.dilations,
    )


def _dimension_check(w, x, h_prev, c_prev):
    m, nin = np.shape(w.W_f)
    if np.shape(x) != (nin,):
        raise ValueError(f"input size {np.shape(x)} does not match weights ({nin},)")
    for v in (h_prev, c_prev):
        if np.shape(v) != (m,):
            raise ValueError(f"state size {np.shape(v)} does not match weights ({m},)")


def lstm_cell(x, h_prev, c_prev, w):
    """Standard LSTM step: gates from the input and the previous hidden
    state, then c = f(*)c_prev + i(*)g and h = o(*)tanh(c)."""
    _dimension_check(w, x, h_prev, c_prev)
    f = sigmoid(matvec(w.W_f, x) + matvec(w.V_f, h_prev) + w.b_f)
    i = sigmoid(matvec(w.W_i, x) + matvec(w.V_i, h_prev) + w.b_i)
    g = tanh(matvec(w.W_g, x) + matvec(w.V_g, h_prev) + w.b_g)
    o = sigmoid(matvec(w.W_o, x) + matvec(w.V_o, h_prev) + w.b_o)
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def rdlstm_cell(h_lower, h_delayed, c_delayed, w):
    """Residual dilated step: recurrent inputs come from ``d`` steps back and
    the lower layer's output is added to tanh(c) inside the output gate."""
    _dimension_check(w, h_lower, h_delayed, c_delayed)
    f = sigmoid(matvec(w.W_f, h_lower) + matvec(w.V_f, h_delayed) + w.b_f)
    i = sigmoid(matvec(w.W_i, h_lower) + matvec(w.V_i, h_delayed) + w.b_i)
    g = tanh(matvec(w.W_g, h_lower) + matvec(w.V_g, h_delayed) + w.b_g)
    o = sigmoid(matvec(w.W_o, h_lower) + matvec(w.V_o, h_delayed) + w.b_o)
    c = f * c_delayed + i * g
    h = o * (tanh(c) + h_lower)
    return h, c


class RecurrentState:
    """Ring buffer of the last ``dilation`` (h, c) pairs of one layer.

    Reading step t returns the states stored at step t - dilation, or the
    zero state when that step precedes the sequence start.
    """

    def __init__(self, dilation, zero, record_reads=False):
        self.dilation = dilation
        self.zero = zero
        self._h = [None] * dilation
        self._c = [None] * dilation
        self._step = [None] * dilation
        self.reads = [] if record_reads else None

    def read(self, t):
        slot = t % self.dilation
        stored = self._step[slot]
        if stored is None:
            if self.reads is not None:
                self.reads.append((t, None))
            return self.zero, self.zero
        assert stored == t - self.dilation
        if self.reads is not None:
            self.reads.append((t, stored))
        return self._h[slot], self._c[slot]

    def write(self, t, h, c):
        slot = t % self.dilation
        self._h[slot] = h
        self._c[slot] = c
        self._step[slot] = t


def forward_sequence(xs, params, record_reads=False):
    """Statefully unroll the network over one series' chronological windows.

    Returns one 12-vector prediction per window.  State is fresh on entry,
    so separate series (and separate epochs) never share state.  With
    ``record_reads`` the per-layer ring buffers log which stored step each
    read resolved to.
    """
    xs = list(xs)
    if not xs:
        raise ValueError("empty window sequence")
    recorded = isinstance(params.out_b, Variable)
    zero = params.out_b.tape.constant(np.zeros(params.m)) if recorded else np.zeros(params.m)
    states = [
        RecurrentState(d, zero, record_reads=record_reads)
        for d in params.dilations
    ]
    preds = []
    for t, x in enumerate(xs):
        inp = x
        for li, (w, state) in enumerate(zip(params.layers, states)):
            h_d, c_d = state.read(t)
            if li == 0:
                h, c = lstm_cell(inp, h_d, c_d, w)
            else:
                h, c = rdlstm_cell(inp, h_d, c_d, w)
            state.write(t, h, c)
            inp = h
        preds.append(matvec(params.out_W, inp) + params.out_b)
    if record_reads:
        return preds, states
    return preds


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_FORMAT = "rdlstm-network"
_VERSION = 1


def network_to_dict(params):
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "m": params.m,
        "dilations": list(params.dilations),
        "arrays": {name: np.asarray(arr).tolist() for name, arr in params.named()},
    }


def network_from_dict(payload):
    if payload.get("format") != _FORMAT:
        raise ValueError(f"not a {_FORMAT} checkpoint")
    if payload.get("version") != _VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    arrays = {name: np.asarray(values, dtype=float) for name, values in payload["arrays"].items()}
    layers = []
    for li in range(4):
        fields = {}
        for kind in ("W", "V", "b"):
            for gate in _GATES:
                fields[f"{kind}_{gate}"] = arrays[f"layer{li}.{kind}_{gate}"]
        layers.append(LayerWeights(**fields))
    return NetworkParams(
        layers=layers,
        out_W=arrays["out.W"],
        out_b=arrays["out.b"],
        m=int(payload["m"]),
        dilations=tuple(payload["dilations"]),
    )


def save_network(params, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(params), fh)


def load_network(path):
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))

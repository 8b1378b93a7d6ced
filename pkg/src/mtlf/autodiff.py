"""Reverse-mode automatic differentiation on an append-only tape.

The tape records array-valued primitives (add, multiply, log, exp, tanh,
logistic, matrix-vector products, reductions, slicing, branch selection) in
execution order.  Because every node is appended after its operands, the
insertion order is already a topological order and a single reverse sweep
computes exact adjoints for all leaves.

Scalars are 0-d arrays; the same primitives therefore cover both the
scalar smoothing recursions and the vector-valued recurrent network.  All
helper functions in this module (:func:`log`, :func:`matvec`, ...) accept
either a :class:`Variable` or a plain numpy array / float, so model code can
be written once and evaluated with or without gradient recording.

Branch selection (:func:`where`) propagates gradient only along the branch
that was actually taken; the condition itself is a constant mask.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tape",
    "Variable",
    "GradientMap",
    "backward",
    "check_gradients",
    "GradientCheckResult",
    "log",
    "exp",
    "tanh",
    "sigmoid",
    "matvec",
    "stack",
    "take",
    "where",
    "vsum",
    "vmean",
    "addn",
]

# Op codes.  Kept as module-level ints (not an Enum) because the backward
# sweep dispatches on them in a hot loop.
_LEAF = 0
_CONST = 1
_ADD = 2
_SUB = 3
_MUL = 4
_DIV = 5
_NEG = 6
_ADDC = 7    # var + const
_RSUBC = 8   # const - var
_MULC = 9    # var * const
_DIVC = 10   # var / const
_RDIVC = 11  # const / var
_LOG = 12
_EXP = 13
_TANH = 14
_SIGMOID = 15
_MATVEC = 16
_SUM = 17
_MEAN = 18
_STACK = 19
_TAKE = 20
_WHERE = 21
_ADDN = 22


def _stable_sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Variable:
    """A handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index")

    # Keep numpy from broadcasting ndarray <op> Variable elementwise; with
    # this set, numpy returns NotImplemented and Python calls our reflected
    # operator instead.
    __array_ufunc__ = None

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape._values[self.index]

    @property
    def shape(self):
        return self.tape._values[self.index].shape

    def __len__(self):
        return len(self.tape._values[self.index])

    def __repr__(self):
        return f"Variable(index={self.index}, value={self.value!r})"

    def __hash__(self):
        return hash((id(self.tape), self.index))

    def __eq__(self, other):
        return (
            isinstance(other, Variable)
            and other.tape is self.tape
            and other.index == self.index
        )

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Variable):
            t = self._same_tape(other)
            return t._push(_ADD, (self.index, other.index), self.value + other.value)
        c = np.asarray(other, dtype=float)
        return self.tape._push(_ADDC, (self.index,), self.value + c, c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Variable):
            t = self._same_tape(other)
            return t._push(_SUB, (self.index, other.index), self.value - other.value)
        c = np.asarray(other, dtype=float)
        return self.tape._push(_ADDC, (self.index,), self.value - c, -c)

    def __rsub__(self, other):
        c = np.asarray(other, dtype=float)
        return self.tape._push(_RSUBC, (self.index,), c - self.value, c)

    def __mul__(self, other):
        if isinstance(other, Variable):
            t = self._same_tape(other)
            return t._push(_MUL, (self.index, other.index), self.value * other.value)
        c = np.asarray(other, dtype=float)
        return self.tape._push(_MULC, (self.index,), self.value * c, c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Variable):
            t = self._same_tape(other)
            return t._push(_DIV, (self.index, other.index), self.value / other.value)
        c = np.asarray(other, dtype=float)
        return self.tape._push(_DIVC, (self.index,), self.value / c, c)

    def __rtruediv__(self, other):
        c = np.asarray(other, dtype=float)
        return self.tape._push(_RDIVC, (self.index,), c / self.value, c)

    def __neg__(self):
        return self.tape._push(_NEG, (self.index,), -self.value)

    def _same_tape(self, other):
        if other.tape is not self.tape:
            raise ValueError("cannot combine variables from different tapes")
        return self.tape


class Tape:
    """Append-only record of primitive operations with cached primal values.

    A tape is single-threaded and single-use: build a graph, call
    :func:`backward`, discard.  Leaf values are copied on registration so
    later in-place updates of the caller's arrays cannot corrupt a recorded
    graph.
    """

    def __init__(self):
        self._ops = []
        self._parents = []
        self._values = []
        self._aux = []
        self._leaves = []

    def __len__(self):
        return len(self._ops)

    def _push(self, op, parents, value, aux=None):
        self._ops.append(op)
        self._parents.append(parents)
        self._values.append(value if isinstance(value, np.ndarray) else np.asarray(value, dtype=float))
        self._aux.append(aux)
        return Variable(self, len(self._ops) - 1)

    def leaf(self, value):
        """Register a differentiable input; its value is copied."""
        var = self._push(_LEAF, (), np.array(value, dtype=float))
        self._leaves.append(var.index)
        return var

    def constant(self, value):
        """Record a non-differentiable input (receives no adjoint)."""
        return self._push(_CONST, (), np.asarray(value, dtype=float))

    def backward(self, loss):
        return backward(self, loss)


# ---------------------------------------------------------------------------
# primitive helpers (Variable or plain numpy)
# ---------------------------------------------------------------------------


def log(x):
    if isinstance(x, Variable):
        return x.tape._push(_LOG, (x.index,), np.log(x.value))
    return np.log(x)


def exp(x):
    if isinstance(x, Variable):
        return x.tape._push(_EXP, (x.index,), np.exp(x.value))
    return np.exp(x)


def tanh(x):
    if isinstance(x, Variable):
        return x.tape._push(_TANH, (x.index,), np.tanh(x.value))
    return np.tanh(x)


def sigmoid(x):
    if isinstance(x, Variable):
        return x.tape._push(_SIGMOID, (x.index,), _stable_sigmoid(x.value))
    return _stable_sigmoid(x)


def matvec(a, x):
    """Matrix-vector product a @ x with gradients to both operands."""
    if isinstance(a, Variable) or isinstance(x, Variable):
        if not isinstance(a, Variable):
            a = x.tape.constant(a)
        if not isinstance(x, Variable):
            x = a.tape.constant(x)
        t = a._same_tape(x)
        return t._push(_MATVEC, (a.index, x.index), a.value @ x.value)
    return np.asarray(a) @ np.asarray(x)


def vsum(x):
    if isinstance(x, Variable):
        return x.tape._push(_SUM, (x.index,), np.asarray(np.sum(x.value)))
    return np.sum(x)


def vmean(x):
    if isinstance(x, Variable):
        return x.tape._push(_MEAN, (x.index,), np.asarray(np.mean(x.value)))
    return np.mean(x)


def stack(items):
    """Stack scalars (or equal-shape arrays) along a new leading axis."""
    items = list(items)
    first_var = next((v for v in items if isinstance(v, Variable)), None)
    if first_var is None:
        return np.array(items, dtype=float)
    tape = first_var.tape
    idxs = []
    vals = []
    for v in items:
        if not isinstance(v, Variable):
            v = tape.constant(v)
        idxs.append(v.index)
        vals.append(v.value)
    return tape._push(_STACK, tuple(idxs), np.stack(vals))


def take(x, key):
    """Index or slice along the leading axis."""
    if isinstance(x, Variable):
        return x.tape._push(_TAKE, (x.index,), np.asarray(x.value[key]), key)
    return x[key]


def where(mask, a, b):
    """Select ``a`` where ``mask`` else ``b``; gradient follows the taken branch."""
    if isinstance(a, Variable) or isinstance(b, Variable):
        if not isinstance(a, Variable):
            a = b.tape.constant(a)
        if not isinstance(b, Variable):
            b = a.tape.constant(b)
        t = a._same_tape(b)
        mask = np.asarray(mask, dtype=bool)
        return t._push(_WHERE, (a.index, b.index), np.where(mask, a.value, b.value), mask)
    return np.where(mask, a, b)


def addn(items):
    """Sum of many same-shape terms as a single node."""
    items = list(items)
    if not items:
        raise ValueError("addn of an empty sequence")
    first_var = next((v for v in items if isinstance(v, Variable)), None)
    if first_var is None:
        return np.sum(items, axis=0)
    tape = first_var.tape
    idxs = []
    total = None
    for v in items:
        if not isinstance(v, Variable):
            v = tape.constant(v)
        idxs.append(v.index)
        total = v.value if total is None else total + v.value
    return tape._push(_ADDN, tuple(idxs), np.asarray(total))


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    """Reduce an adjoint back to an operand's shape after broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class GradientMap:
    """Adjoints of a loss with respect to every leaf of a tape.

    Leaves that the loss does not depend on map to zeros.
    """

    def __init__(self, tape, adjoints):
        self._tape = tape
        self._adjoints = adjoints

    def __getitem__(self, var):
        if var.tape is not self._tape:
            raise KeyError("variable does not belong to this tape")
        g = self._adjoints.get(var.index)
        if g is None:
            if var.index not in self._tape._leaves:
                raise KeyError("not a leaf variable")
            return np.zeros_like(var.value)
        return g


def backward(tape, loss):
    """Single reverse sweep; returns exact adjoints for all tape leaves."""
    if not isinstance(loss, Variable) or loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.value.shape != ():
        raise ValueError("loss must be scalar")

    ops = tape._ops
    parents = tape._parents
    values = tape._values
    auxs = tape._aux

    adj = [None] * (loss.index + 1)
    adj[loss.index] = np.ones(())

    def acc(j, g):
        a = adj[j]
        if a is None:
            adj[j] = np.array(g, dtype=float)
        else:
            a += g

    for i in range(loss.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op = ops[i]
        if op == _LEAF or op == _CONST:
            continue
        p = parents[i]
        if op == _ADD:
            a, b = p
            acc(a, _unbroadcast(g, values[a].shape))
            acc(b, _unbroadcast(g, values[b].shape))
        elif op == _MUL:
            a, b = p
            acc(a, _unbroadcast(g * values[b], values[a].shape))
            acc(b, _unbroadcast(g * values[a], values[b].shape))
        elif op == _MATVEC:
            a, x = p
            acc(a, np.outer(g, values[x]))
            acc(x, values[a].T @ g)
        elif op == _SUB:
            a, b = p
            acc(a, _unbroadcast(g, values[a].shape))
            acc(b, _unbroadcast(-g, values[b].shape))
        elif op == _DIV:
            a, b = p
            acc(a, _unbroadcast(g / values[b], values[a].shape))
            acc(b, _unbroadcast(-g * values[i] / values[b], values[b].shape))
        elif op == _SIGMOID:
            s = values[i]
            acc(p[0], g * s * (1.0 - s))
        elif op == _TANH:
            t = values[i]
            acc(p[0], g * (1.0 - t * t))
        elif op == _ADDC:
            acc(p[0], _unbroadcast(g, values[p[0]].shape))
        elif op == _MULC:
            acc(p[0], _unbroadcast(g * auxs[i], values[p[0]].shape))
        elif op == _RSUBC:
            acc(p[0], _unbroadcast(-g, values[p[0]].shape))
        elif op == _DIVC:
            acc(p[0], _unbroadcast(g / auxs[i], values[p[0]].shape))
        elif op == _RDIVC:
            a = p[0]
            acc(a, _unbroadcast(-g * values[i] / values[a], values[a].shape))
        elif op == _LOG:
            acc(p[0], g / values[p[0]])
        elif op == _EXP:
            acc(p[0], g * values[i])
        elif op == _NEG:
            acc(p[0], -g)
        elif op == _SUM:
            a = p[0]
            acc(a, np.broadcast_to(g, values[a].shape))
        elif op == _MEAN:
            a = p[0]
            acc(a, np.broadcast_to(g / values[a].size, values[a].shape))
        elif op == _STACK:
            for comp, j in enumerate(p):
                acc(j, g[comp])
        elif op == _TAKE:
            j = p[0]
            a = adj[j]
            if a is None:
                a = np.zeros_like(values[j])
                adj[j] = a
            a[auxs[i]] += g
        elif op == _WHERE:
            mask = auxs[i]
            a, b = p
            acc(a, _unbroadcast(np.where(mask, g, 0.0), values[a].shape))
            acc(b, _unbroadcast(np.where(mask, 0.0, g), values[b].shape))
        elif op == _ADDN:
            for j in p:
                acc(j, _unbroadcast(g, values[j].shape))
        else:  # pragma: no cover
            raise AssertionError(f"unhandled op code {op}")

    return GradientMap(tape, {j: adj[j] for j in tape._leaves if j <= loss.index and adj[j] is not None})


# ---------------------------------------------------------------------------
# finite-difference validation
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckResult:
    max_error: float
    worst_leaf: str
    per_leaf: dict

    def __float__(self):
        return self.max_error


def check_gradients(builder, params, step=1e-5):
    """Compare analytic adjoints against central finite differences.

    ``builder(tape, leaves)`` must deterministically construct a scalar loss
    from ``leaves``, a dict of leaf Variables mirroring ``params`` (a dict of
    arrays).  The graph is rebuilt at each perturbed leaf value, so the
    finite-difference side never touches the tape's own gradients.

    Relative error is used except where ``|analytic| < 1e-8``, where absolute
    error applies.  Raises ``ValueError`` if any perturbed loss is non-finite.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: np.array(v, dtype=float) for k, v in params.items()}

    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in base.items()}
    loss = builder(tape, leaves)
    grads = backward(tape, loss)

    def loss_at(values):
        t = Tape()
        lv = {k: t.leaf(v) for k, v in values.items()}
        out = float(builder(t, lv).value)
        if not np.isfinite(out):
            raise ValueError("non-finite loss at a perturbed point")
        return out

    per_leaf = {}
    worst = 0.0
    worst_leaf = ""
    for name, value in base.items():
        analytic = np.asarray(grads[leaves[name]], dtype=float).reshape(-1)
        flat = value.reshape(-1)
        leaf_worst = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = loss_at(base)
            flat[i] = saved - step
            down = loss_at(base)
            flat[i] = saved
            fd = (up - down) / (2.0 * step)
            a = analytic[i]
            if abs(a) < 1e-8:
                err = abs(a - fd)
            else:
                err = abs(a - fd) / max(abs(a), abs(fd))
            leaf_worst = max(leaf_worst, err)
        per_leaf[name] = leaf_worst
        if leaf_worst >= worst:
            worst = leaf_worst
            worst_leaf = name
    return GradientCheckResult(max_error=worst, worst_leaf=worst_leaf, per_leaf=per_leaf)

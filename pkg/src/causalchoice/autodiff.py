"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` nodes in
execution order.  :func:`gradient` walks that record backwards once and
returns adjoints for the requested leaves.  The numeric helpers at the top of
the module (``softplus``, ``sigmoid``, ``softmax`` ...) accept plain numbers
and arrays as well as ``Var`` nodes, so model code can be written once and
evaluated with or without a tape.

The optimizer used by every trainable model in the package (RMSprop) lives
at the bottom of the module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """Input outside the domain of a numeric function."""


class StructuralError(ValueError):
    """Mismatched shapes or a parameter that was never recorded."""


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite input")
    return arr


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    """A node on a :class:`Tape` holding a float64 array value."""

    __slots__ = ("value", "tape", "index", "parents")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: "Tape", value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.tape = tape
        self.parents = parents
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value) -> Var:
        """Register a differentiable input (a parameter copy)."""
        return Var(self, np.array(value, dtype=float, copy=True))

    def __len__(self):
        return len(self.nodes)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise StructuralError("operands recorded on different tapes")
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _record(tape, value, pairs):
    """Create a node whose parents are the ``Var`` entries of ``pairs``."""
    parents = tuple((p, fn) for p, fn in pairs if isinstance(p, Var))
    return Var(tape, value, parents)


# --------------------------------------------------------------- elementwise


def add(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av + bv
    if tape is None:
        return out
    return _record(
        tape,
        out,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))],
    )


def neg(a):
    if not isinstance(a, Var):
        return -np.asarray(a, dtype=float)
    return _record(a.tape, -a.value, [(a, lambda g: -g)])


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av * bv
    if tape is None:
        return out
    return _record(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av / bv
    if tape is None:
        return out
    return _record(
        tape,
        out,
        [
            (a, lambda g: _unbroadcast(g / bv, av.shape)),
            (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)),
        ],
    )


def exp(x):
    if not isinstance(x, Var):
        return np.exp(np.asarray(x, dtype=float))
    out = np.exp(x.value)
    return _record(x.tape, out, [(x, lambda g: g * out)])


def log(x):
    if not isinstance(x, Var):
        return np.log(np.asarray(x, dtype=float))
    xv = x.value
    return _record(x.tape, np.log(xv), [(x, lambda g: g / xv)])


def absolute(x):
    if not isinstance(x, Var):
        return np.abs(np.asarray(x, dtype=float))
    xv = x.value
    return _record(x.tape, np.abs(xv), [(x, lambda g: g * np.sign(xv))])


def clamp_min(x, floor: float):
    """``max(x, floor)``; the gradient is zero where the floor is active."""
    if not isinstance(x, Var):
        return np.maximum(np.asarray(x, dtype=float), floor)
    xv = x.value
    keep = xv > floor
    return _record(x.tape, np.where(keep, xv, floor), [(x, lambda g: g * keep)])


def softplus(x):
    """``ln(1 + e^x)`` without overflow."""
    if isinstance(x, Var):
        xv = x.value
        return _record(x.tape, np.logaddexp(0.0, xv), [(x, lambda g: g * _sigmoid_np(xv))])
    arr = _check_finite(x)
    out = np.logaddexp(0.0, arr)
    return float(out) if np.ndim(x) == 0 else out


def _sigmoid_np(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    """Logistic function, evaluated on the side that cannot overflow."""
    if isinstance(x, Var):
        s = _sigmoid_np(x.value)
        return _record(x.tape, s, [(x, lambda g: g * s * (1.0 - s))])
    arr = _check_finite(x)
    out = _sigmoid_np(arr)
    return float(out) if np.ndim(x) == 0 else out


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(np.asarray(x, dtype=float))
    t = np.tanh(x.value)
    return _record(x.tape, t, [(x, lambda g: g * (1.0 - t * t))])


def _logsumexp(v, axis):
    m = np.max(v, axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    if isinstance(x, Var):
        xv = x.value
        out = xv - _logsumexp(xv, axis)
        p = np.exp(out)
        return _record(
            x.tape, out, [(x, lambda g: g - p * np.sum(g, axis=axis, keepdims=True))]
        )
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise DomainError("softmax of an empty vector")
    _check_finite(arr)
    return arr - _logsumexp(arr, axis)


def softmax(v, axis=-1):
    """Normalized exponentials; invariant to a constant shift of ``v``."""
    if isinstance(v, Var):
        return exp(log_softmax(v, axis=axis))
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise DomainError("softmax of an empty vector")
    _check_finite(arr)
    e = np.exp(arr - np.max(arr, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# ----------------------------------------------------------------- structure


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    out = av @ bv
    if tape is None:
        return out

    def ga(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv
        if av.ndim == 1:
            return bv @ g
        if bv.ndim == 1:
            return np.outer(g, bv)
        return g @ bv.T

    def gb(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * av
        if av.ndim == 1:
            return np.outer(av, g)
        if bv.ndim == 1:
            return av.T @ g
        return av.T @ g

    return _record(tape, out, [(a, ga), (b, gb)])


def vsum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.value

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return _record(x.tape, np.sum(xv, axis=axis, keepdims=keepdims), [(x, back)])


def mean(x, axis=None):
    n = _val(x).size if axis is None else _val(x).shape[axis]
    return vsum(x, axis=axis) * (1.0 / n)


def getitem(x, key):
    if not isinstance(x, Var):
        return np.asarray(x)[key]
    xv = x.value

    def back(g):
        out = np.zeros_like(xv)
        np.add.at(out, key, g)
        return out

    return _record(x.tape, xv[key], [(x, back)])


def pick(x, idx):
    """Row-wise selection ``x[n, idx[n]]`` from a 2-D array."""
    rows = np.arange(len(idx))
    return getitem(x, (rows, np.asarray(idx)))


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    old = x.value.shape
    return _record(x.tape, x.value.reshape(shape), [(x, lambda g: g.reshape(old))])


def transpose(x):
    if not isinstance(x, Var):
        return np.transpose(x)
    return _record(x.tape, x.value.T, [(x, lambda g: g.T)])


def concatenate(xs: Sequence, axis=-1):
    tape = _tape_of(*xs)
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def make(i):
        sl = [slice(None)] * out.ndim
        sl[ax] = slice(bounds[i], bounds[i + 1])
        return lambda g: g[tuple(sl)]

    return _record(tape, out, [(x, make(i)) for i, x in enumerate(xs)])


# ------------------------------------------------------------------ gradient


def gradient(objective: Var, params: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar ``objective`` with respect to ``params``.

    Every node is visited once in reverse recording order.  Parameters that
    do not influence the objective get a zero gradient; parameters recorded
    on a different tape raise :class:`StructuralError`.
    """
    if not isinstance(objective, Var):
        raise StructuralError("objective was not recorded on a tape")
    if objective.value.size != 1:
        raise StructuralError("objective must be a scalar")
    tape = objective.tape
    for p in params:
        if not isinstance(p, Var) or p.tape is not tape:
            raise StructuralError("parameter is not on the objective's tape")
    adj: list = [None] * len(tape.nodes)
    adj[objective.index] = np.ones_like(objective.value)
    for node in reversed(tape.nodes[: objective.index + 1]):
        g = adj[node.index]
        if g is None:
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            prev = adj[parent.index]
            adj[parent.index] = contrib if prev is None else prev + contrib
    out = []
    for p in params:
        g = adj[p.index]
        out.append(np.zeros_like(p.value) if g is None else np.array(g, dtype=float).reshape(p.shape))
    return out


def value_and_grad(fn: Callable[..., Var], arrays: Sequence[np.ndarray]):
    """Evaluate ``fn`` on fresh leaves for ``arrays`` and differentiate it."""
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    obj = fn(*leaves)
    return float(obj.value), gradient(obj, leaves)


def numerical_gradient(fn: Callable[..., float], arrays: Sequence[np.ndarray], step=1e-5):
    """Central finite differences of a scalar function of several arrays."""
    arrays = [np.array(a, dtype=float, copy=True) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn(*arrays)
            flat[i] = orig - step
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


# ----------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    """RMSprop state: running mean of squared gradients per parameter."""

    lr: float
    decay: float = 0.9
    eps: float = 1e-8
    avg: list[np.ndarray] = field(default_factory=list)
    steps: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("learning rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise DomainError("decay must lie in (0, 1)")
        if not self.eps > 0:
            raise DomainError("epsilon must be positive")


def rmsprop_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState):
    """One RMSprop update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise StructuralError("params and grads differ in length")
    avg = state.avg or [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    if len(avg) != len(params):
        raise StructuralError("optimizer state does not match parameters")
    new_params, new_avg = [], []
    for p, g, a in zip(params, grads, avg):
        p = np.asarray(p, dtype=float)
        g = np.asarray(g, dtype=float)
        if p.shape != g.shape or a.shape != p.shape:
            raise StructuralError(f"shape mismatch {p.shape} vs {g.shape}")
        a = state.decay * a + (1.0 - state.decay) * g * g
        new_avg.append(a)
        new_params.append(p - state.lr * g / (np.sqrt(a) + state.eps))
    new_state = OptimizerState(state.lr, state.decay, state.eps, new_avg, state.steps + 1)
    return new_params, new_state

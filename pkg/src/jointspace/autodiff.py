"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``DiffValue`` records one node of a computation graph: a float64 array plus
the parents and vector-Jacobian product needed for the backward sweep.  Every
primitive computes its forward value eagerly and registers an analytic VJP.
``backward`` runs one reverse topological sweep from a scalar loss and
populates ``grad`` on every reachable node exactly once.

The engine is deliberately small: the set of primitives below is exactly what
the attention layers, ball arithmetic and loss terms need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DiffValue",
    "as_diff",
    "backward",
    "finite_diff_check",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose",
    "concat", "reshape", "gather_rows", "segment_sum", "segment_softmax",
    "tanh", "atanh", "exp", "log", "sqrt", "abs_", "clamp", "pow_const",
    "leaky_relu", "elu", "sigmoid", "softplus",
    "sum_", "mean_", "vector_norm",
]

Array = np.ndarray


class DiffValue:
    """A node in the differentiable computation record."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents: tuple = (), _vjp=None):
        self.value: Array = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"DiffValue(shape={self.value.shape}, leaf={self._vjp is None})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def as_diff(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> DiffValue:
    a, b = as_diff(a), as_diff(b)
    out = a.value + b.value
    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)
    return DiffValue(out, (a, b), vjp)


def sub(a, b) -> DiffValue:
    a, b = as_diff(a), as_diff(b)
    out = a.value - b.value
    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)
    return DiffValue(out, (a, b), vjp)


def neg(a) -> DiffValue:
    a = as_diff(a)
    return DiffValue(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> DiffValue:
    a, b = as_diff(a), as_diff(b)
    out = a.value * b.value
    def vjp(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))
    return DiffValue(out, (a, b), vjp)


def div(a, b) -> DiffValue:
    a, b = as_diff(a), as_diff(b)
    out = a.value / b.value
    def vjp(g):
        return (_unbroadcast(g / b.value, a.value.shape),
                _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))
    return DiffValue(out, (a, b), vjp)


def matmul(a, b) -> DiffValue:
    a, b = as_diff(a), as_diff(b)
    out = a.value @ b.value
    def vjp(g):
        return g @ b.value.T, a.value.T @ g
    return DiffValue(out, (a, b), vjp)


def transpose(a) -> DiffValue:
    a = as_diff(a)
    return DiffValue(a.value.T, (a,), lambda g: (g.T,))


def concat(parts: Sequence, axis: int = 0) -> DiffValue:
    parts = [as_diff(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def vjp(g):
        slices = []
        for i in range(len(parts)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            slices.append(g[tuple(idx)])
        return tuple(slices)
    return DiffValue(out, tuple(parts), vjp)


def reshape(a, shape: tuple[int, ...]) -> DiffValue:
    a = as_diff(a)
    old = a.value.shape
    return DiffValue(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# Indexing and segment reductions
# ---------------------------------------------------------------------------

def gather_rows(a, idx) -> DiffValue:
    """Select ``a[idx]`` along the first axis; backward scatter-adds."""
    a = as_diff(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.value[idx]
    def vjp(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        return (acc,)
    return DiffValue(out, (a,), vjp)


def segment_sum(a, segment_ids, num_segments: int) -> DiffValue:
    """Sum rows of ``a`` into ``num_segments`` buckets given per-row ids."""
    a = as_diff(a)
    seg = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + a.value.shape[1:])
    np.add.at(out, seg, a.value)
    return DiffValue(out, (a,), lambda g: (g[seg],))


def segment_softmax(logits, segment_ids, num_segments: int) -> DiffValue:
    """Softmax of a flat logit vector within each segment (per-node neighbors)."""
    a = as_diff(logits)
    if a.value.ndim != 1:
        raise ValueError("segment_softmax expects a flat logit vector")
    seg = np.asarray(segment_ids, dtype=np.int64)
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, seg, a.value)
    ex = np.exp(a.value - mx[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, ex)
    out = ex / denom[seg]
    def vjp(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, g * out)
        return (out * (g - dot[seg]),)
    return DiffValue(out, (a,), vjp)


# ---------------------------------------------------------------------------
# Elementwise nonlinearities
# ---------------------------------------------------------------------------

def tanh(a) -> DiffValue:
    a = as_diff(a)
    out = np.tanh(a.value)
    return DiffValue(out, (a,), lambda g: (g * (1.0 - out * out),))


def atanh(a) -> DiffValue:
    """Inverse hyperbolic tangent; callers must clamp inputs inside (-1, 1)."""
    a = as_diff(a)
    out = np.arctanh(a.value)
    return DiffValue(out, (a,), lambda g: (g / (1.0 - a.value * a.value),))


def exp(a) -> DiffValue:
    a = as_diff(a)
    out = np.exp(a.value)
    return DiffValue(out, (a,), lambda g: (g * out,))


def log(a) -> DiffValue:
    a = as_diff(a)
    return DiffValue(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> DiffValue:
    """Square root with subgradient 0 at exactly 0."""
    a = as_diff(a)
    out = np.sqrt(a.value)
    def vjp(g):
        d = np.where(a.value > 0.0, 0.5 / np.where(out > 0.0, out, 1.0), 0.0)
        return (g * d,)
    return DiffValue(out, (a,), vjp)


def abs_(a) -> DiffValue:
    a = as_diff(a)
    return DiffValue(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def clamp(a, lo: float | None = None, hi: float | None = None) -> DiffValue:
    """Clip values; gradient is identity inside [lo, hi] and zero outside."""
    a = as_diff(a)
    out = np.clip(a.value, lo, hi)
    inside = np.ones_like(a.value)
    if lo is not None:
        inside = inside * (a.value >= lo)
    if hi is not None:
        inside = inside * (a.value <= hi)
    return DiffValue(out, (a,), lambda g: (g * inside,))


def pow_const(a, p: float) -> DiffValue:
    """a ** p for constant p; domain a >= 0 when p is non-integer."""
    a = as_diff(a)
    out = np.power(a.value, p)
    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(a.value, p - 1.0)
        d = np.where(np.isfinite(d), d, 0.0)
        return (g * d,)
    return DiffValue(out, (a,), vjp)


def leaky_relu(a, slope: float = 0.2) -> DiffValue:
    a = as_diff(a)
    out = np.where(a.value > 0.0, a.value, slope * a.value)
    return DiffValue(out, (a,),
                     lambda g: (g * np.where(a.value > 0.0, 1.0, slope),))


def elu(a, alpha: float = 1.0) -> DiffValue:
    a = as_diff(a)
    ex = np.exp(np.minimum(a.value, 0.0))
    out = np.where(a.value > 0.0, a.value, alpha * (ex - 1.0))
    return DiffValue(out, (a,),
                     lambda g: (g * np.where(a.value > 0.0, 1.0, alpha * ex),))


def sigmoid(a) -> DiffValue:
    a = as_diff(a)
    x = a.value
    out = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return DiffValue(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> DiffValue:
    """log(1 + exp(x)) computed stably; gradient is the logistic function."""
    a = as_diff(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    def vjp(g):
        s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)
    return DiffValue(out, (a,), vjp)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_(a, axis: int | None = None, keepdims: bool = False) -> DiffValue:
    a = as_diff(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).astype(np.float64),)
    return DiffValue(out, (a,), vjp)


def mean_(a, axis: int | None = None, keepdims: bool = False) -> DiffValue:
    a = as_diff(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def vector_norm(a, axis: int = -1, keepdims: bool = True) -> DiffValue:
    """Euclidean norm along one axis with subgradient 0 at zero vectors."""
    a = as_diff(a)
    out = np.sqrt(np.sum(a.value * a.value, axis=axis, keepdims=keepdims))
    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
            denom = np.expand_dims(out, axis)
        else:
            denom = out
        return (g * a.value / np.maximum(denom, 1e-15),)
    return DiffValue(out, (a,), vjp)


# ---------------------------------------------------------------------------
# Backward sweep and gradient checking
# ---------------------------------------------------------------------------

def _toposort(root: DiffValue) -> list[DiffValue]:
    order: list[DiffValue] = []
    visited: set[int] = set()
    stack: list[tuple[DiffValue, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: DiffValue) -> None:
    """Populate ``grad`` on every node reachable from a scalar loss."""
    if loss.value.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is not None:
                parent.grad += g


def finite_diff_check(loss_fn: Callable[[], DiffValue],
                      params: Sequence[DiffValue],
                      h: float = 1e-5,
                      rel_floor: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must rebuild the computation from the same ``params`` leaves.
    Relative error uses max(|analytic|, |fd|, rel_floor) as denominator so
    coordinates with negligible gradient are compared on an absolute scale.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ValueError("h must lie in [1e-6, 1e-4]")
    loss = loss_fn()
    backward(loss)
    analytic = [np.array(p.grad, copy=True) for p in params]
    worst = 0.0
    for p, grads in zip(params, analytic):
        for idx in np.ndindex(p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + h
            up = float(loss_fn().value)
            p.value[idx] = orig - h
            down = float(loss_fn().value)
            p.value[idx] = orig
            fd = (up - down) / (2.0 * h)
            a = float(grads[idx])
            rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            worst = max(worst, rel)
    return worst

"""Small reverse-mode automatic differentiation engine over numpy arrays.

Every primitive returns a :class:`Value` that remembers its parents and a
closure mapping the output gradient to the parents' gradients.  Nodes carry a
monotonically increasing id, so sorting the reachable nodes by id gives a
valid topological order (creation order); :func:`backward` walks it in
reverse, visiting each node once.

Elementwise primitives follow numpy broadcasting; gradients are summed back
to the operand's shape.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from . import linalg
from .errors import NotScalar, ShapeMismatch

_next_id = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Value:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "_grad", "requires_grad", "parents", "_backward", "id", "op", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self.parents: tuple[Value, ...] = ()
        self._backward: BackwardFn | None = None
        self.id = next(_next_id)
        self.op = "leaf"
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Value({self.op}{tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name: str | None = None) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def make_node(data, parents: Iterable[Value], backward: BackwardFn, op: str) -> Value:
    """Create an output node; ``backward(g)`` returns one gradient (or None) per parent."""
    parents = tuple(parents)
    out = Value(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Value, b: Value, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


class Tape:
    """Reachable graph of a loss in creation (topological) order."""

    def __init__(self, nodes: list[Value]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Value) -> "Tape":
        seen = {loss.id: loss}
        stack = [loss]
        while stack:
            node = stack.pop()
            for p in node.parents:
                if p.requires_grad and p.id not in seen:
                    seen[p.id] = p
                    stack.append(p)
        return cls(sorted(seen.values(), key=lambda v: v.id))

    def __len__(self):
        return len(self.nodes)


def backward(loss: Value) -> Tape:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node that requires it."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a 1x1 loss, got shape {loss.shape}")
    tape = Tape.from_loss(loss)
    if not loss.requires_grad:
        return tape
    pending = {loss.id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        pgrads = node._backward(g)
        for parent, pg in zip(node.parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
            prev = pending.get(parent.id)
            pending[parent.id] = pg if prev is None else prev + pg
    return tape


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(B, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(A, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_node(A @ B, (a, b), bw, "matmul")


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Value:
    """Elementwise product."""
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return make_node(A * B, (a, b), lambda g: (g * B, g * A), "mul")


elementwise_mul = mul


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "div")
    A, B = a.data, b.data
    out = A / B
    return make_node(out, (a, b), lambda g: (g / B, -g * out / B), "div")


def scalar_mul(a, c: float) -> Value:
    a = as_value(a)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: shapes {[v.shape for v in values]}") from None
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def bw(g):
        return np.split(g, sizes, axis=axis)

    return make_node(out, values, bw, "concat")


def concat_cols(values: Sequence[Value]) -> Value:
    return concat(values, axis=-1)


def index(a, key) -> Value:
    """Basic or advanced indexing; gradients scatter-add back."""
    a = as_value(a)
    shape = a.shape

    basic = all(isinstance(k, (int, slice, type(Ellipsis))) for k in (key if isinstance(key, tuple) else (key,)))

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return make_node(a.data[key], (a,), bw, "index")


def slice_cols(a, start: int, stop: int) -> Value:
    return index(a, (Ellipsis, slice(start, stop)))


def transpose(a) -> Value:
    """Swap the last two axes."""
    a = as_value(a)
    if a.ndim < 2:
        raise ShapeMismatch(f"transpose needs ndim >= 2, got shape {a.shape}")
    return make_node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape) -> Value:
    a = as_value(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {old} as {shape}") from None
    return make_node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def sigmoid(a) -> Value:
    a = as_value(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def leaky_relu(a, slope: float = 0.2) -> Value:
    a = as_value(a)
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)
    return make_node(out, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Value:
    a = as_value(a)
    x = a.data
    return make_node(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a) -> Value:
    """Square root; the gradient at exactly 0 is taken as 0."""
    a = as_value(a)
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return make_node(out, (a,), bw, "sqrt")


def square(a) -> Value:
    a = as_value(a)
    x = a.data
    return make_node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def clip(a, lo: float = -np.inf, hi: float = np.inf) -> Value:
    a = as_value(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_node(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


def sum(a, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    """Sum; with ``axis=None`` the result is a 1x1 matrix."""
    a = as_value(a)
    shape = a.shape
    if axis is None:
        out = np.array([[a.data.sum()]])
        return make_node(out, (a,), lambda g: (np.broadcast_to(g.reshape(()), shape),), "sum")
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scalar_mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def l1_norm(a) -> Value:
    a = as_value(a)
    s = np.sign(a.data)
    out = np.array([[np.abs(a.data).sum()]])
    return make_node(out, (a,), lambda g: (g.reshape(()) * s,), "l1_norm")


def l2_norm_cols(a) -> Value:
    """Euclidean norm of each column (reduction over axis -2), shape (..., 1, p)."""
    a = as_value(a)
    x = a.data
    out = np.sqrt(np.sum(x * x, axis=-2, keepdims=True))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * x / safe, 0.0),)

    return make_node(out, (a,), bw, "l2_norm_cols")


def softmax(a, axis: int = -1, mask=None) -> Value:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    a = as_value(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax: a group has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return make_node(s, (a,), bw, "softmax")


softmax_over_group = softmax


def stop_gradient(a) -> Value:
    """Same data, no gradient flows back through the result."""
    a = as_value(a)
    out = Value(a.data)
    out.op = "stop_gradient"
    return out


def spd_inverse(a) -> Value:
    """Inverse of an SPD matrix; adjoint is ``-A^{-1} G A^{-1}``."""
    a = as_value(a)
    inv = linalg.spd_inverse(a.data)

    def bw(g):
        return (-(inv @ g @ inv),)

    return make_node(inv, (a,), bw, "spd_inverse")


def lambda_max(a, max_iters: int = 50, tol: float = 1e-7, seed: int = 0) -> Value:
    """Dominant eigenvalue of an SPD matrix by power iteration, as a 1x1 Value.

    Differentiated through the converged eigenvector: ``d lambda / dA = v v^T``.
    """
    a = as_value(a)
    lam, v, _ = linalg.power_iteration(a.data, max_iters, tol, seed, return_vector=True)

    def bw(g):
        return (g.reshape(()) * np.outer(v, v),)

    return make_node(np.array([[lam]]), (a,), bw, "lambda_max")


def no_grad_copy(params: dict[str, Value]) -> dict[str, Value]:
    """Constant snapshot of a parameter dict."""
    return {k: Value(v.data.copy()) for k, v in params.items()}

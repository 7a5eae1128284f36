"""Reverse-mode automatic differentiation on dense float64 matrices.

The graph is built define-by-run: every primitive records its parent nodes
and a backward closure, and :func:`backward` replays that tape once in
reverse topological order. Everything is 2-D — vectors are ``(1, m)`` rows
or ``(n, 1)`` columns and scalars are ``(1, 1)`` — which keeps every
gradient rule a plain matrix identity.

Also hosts the Adam optimizer used for all parameter updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DivergenceError, ShapeError

Array = np.ndarray

# backward closures return ((parent, grad_wrt_parent), ...)
BackwardFn = Callable[[Array], tuple]


def _as_matrix(data) -> Array:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D matrices, got shape {arr.shape}")
    return arr


class Tensor:
    """A matrix node in the computation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            raise ShapeError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _result(cls, data: Array, parents: tuple, backward: BackwardFn) -> "Tensor":
        # Constant subgraphs are pruned: a node with no differentiable parent
        # keeps no tape references and costs nothing at backward time.
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A constant view of this tensor, cut out of the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    # exact shape match, or one operand is a (1, 1) scalar
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not match")


def _reduce_to(g: Array, shape: tuple[int, int]) -> Array:
    """Collapse a broadcast gradient back onto a scalar operand."""
    if g.shape == shape:
        return g
    return g.sum().reshape(1, 1)


# primitive ops -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")

    def bw(g: Array):
        return ((a, _reduce_to(g, a.data.shape)), (b, _reduce_to(g, b.data.shape)))

    return Tensor._result(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")

    def bw(g: Array):
        return ((a, _reduce_to(g, a.data.shape)), (b, _reduce_to(-g, b.data.shape)))

    return Tensor._result(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product (either operand may be a (1, 1) scalar)."""
    _check_binary(a, b, "mul")

    def bw(g: Array):
        return (
            (a, _reduce_to(g * b.data, a.data.shape)),
            (b, _reduce_to(g * a.data, b.data.shape)),
        )

    return Tensor._result(a.data * b.data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "div")
    out = a.data / b.data

    def bw(g: Array):
        return (
            (a, _reduce_to(g / b.data, a.data.shape)),
            (b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape)),
        )

    return Tensor._result(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )

    def bw(g: Array):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor._result(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g: Array):
        return ((a, g.T),)

    return Tensor._result(a.data.T.copy(), (a,), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g: Array):
        return ((a, g * c),)

    return Tensor._result(a.data * c, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g: Array):
        return ((a, g * mask),)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), bw)


def _sigmoid_stable(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_stable(a.data)

    def bw(g: Array):
        return ((a, g * y * (1.0 - y)),)

    return Tensor._result(y, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(g: Array):
        return ((a, g * (1.0 - y * y)),)

    return Tensor._result(y, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bw(g: Array):
        return ((a, g * 0.5 / y),)

    return Tensor._result(y, (a,), bw)


def rsqrt(a: Tensor) -> Tensor:
    """Elementwise x ** -0.5; operands must be strictly positive."""
    y = 1.0 / np.sqrt(a.data)

    def bw(g: Array):
        return ((a, g * (-0.5) * y * y * y),)

    return Tensor._result(y, (a,), bw)


def mean(a: Tensor) -> Tensor:
    size = a.data.size

    def bw(g: Array):
        return ((a, np.full_like(a.data, g.reshape(-1)[0] / size)),)

    return Tensor._result(a.data.mean().reshape(1, 1), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g: Array):
        return ((a, np.full_like(a.data, g.reshape(-1)[0])),)

    return Tensor._result(a.data.sum().reshape(1, 1), (a,), bw)


def sum_rows(a: Tensor) -> Tensor:
    """Row sums, shape (n, 1)."""

    def bw(g: Array):
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return Tensor._result(a.data.sum(axis=1, keepdims=True), (a,), bw)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows, shape (1, m)."""
    n = a.data.shape[0]

    def bw(g: Array):
        return ((a, np.broadcast_to(g / n, a.data.shape).copy()),)

    return Tensor._result(a.data.mean(axis=0, keepdims=True), (a,), bw)


def center_rows(a: Tensor) -> Tensor:
    """Subtract the across-row mean from every row (projection I - 11^T/n)."""

    def bw(g: Array):
        return ((a, g - g.mean(axis=0, keepdims=True)),)

    return Tensor._result(a.data - a.data.mean(axis=0, keepdims=True), (a,), bw)


def bias_add(x: Tensor, v: Tensor) -> Tensor:
    """Add a (1, m) row vector to every row of an (n, m) matrix."""
    if v.data.shape != (1, x.data.shape[1]):
        raise ShapeError(
            f"bias_add: bias {v.data.shape} does not broadcast onto {x.data.shape}"
        )

    def bw(g: Array):
        return ((x, g), (v, g.sum(axis=0, keepdims=True)))

    return Tensor._result(x.data + v.data, (x, v), bw)


def triu_vec(a: Tensor) -> Tensor:
    """Strict upper triangle flattened to an (k, 1) column, row-major order."""
    n = a.data.shape[0]
    if a.data.shape[1] != n:
        raise ShapeError(f"triu_vec requires a square matrix, got {a.data.shape}")
    iu = np.triu_indices(n, 1)

    def bw(g: Array):
        out = np.zeros_like(a.data)
        out[iu] = g.reshape(-1)
        return ((a, out),)

    return Tensor._result(a.data[iu].reshape(-1, 1), (a,), bw)


def value_override(t: Tensor, value) -> Tensor:
    """A node carrying an externally computed value with a pass-through gradient.

    Lets a loss report an exactly computed scalar while backpropagating
    through a numerically stabilized surrogate of the same quantity.
    """
    data = _as_matrix(value)
    if data.shape != t.data.shape:
        raise ShapeError(
            f"value_override: value shape {data.shape} != tensor shape {t.data.shape}"
        )

    def bw(g: Array):
        return ((t, g),)

    return Tensor._result(data, (t,), bw)


def masked_softmax(logits: Tensor, mask: Array) -> Tensor:
    """Row softmax restricted to ``mask``; masked entries are exactly 0.

    A fully masked row yields an all-zero row rather than an error. The max
    of each row's unmasked entries is subtracted before exponentiation.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.data.shape:
        raise ShapeError(
            f"masked_softmax: mask {mask.shape} does not match logits "
            f"{logits.data.shape}"
        )
    x = np.where(mask, logits.data, -np.inf)
    rowmax = x.max(axis=1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(np.where(mask, logits.data - rowmax, -np.inf))
    e = np.where(mask, e, 0.0)
    denom = e.sum(axis=1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def bw(g: Array):
        dot = (g * out).sum(axis=1, keepdims=True)
        return ((logits, out * (g - dot)),)

    return Tensor._result(out, (logits,), bw)


# backward pass -------------------------------------------------------------


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Gradients of a scalar loss w.r.t. every differentiable tensor.

    Returns a map keyed by tensor identity. Parameters that do not appear in
    the loss's graph are simply absent (callers treat that as a zero
    gradient). Replaying the same tape gives bitwise-identical results: the
    traversal and accumulation orders are fixed by graph construction.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    grads: dict[Tensor, Array] = {loss: np.ones_like(loss.data)}
    for node in reversed(topo):
        fn = node._backward
        if fn is None:
            continue
        g = grads.get(node)
        if g is None:
            continue
        for parent, pg in fn(g):
            if not parent.requires_grad:
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads


# Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment accumulators, keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def init_adam(params: Mapping[str, Tensor], lr: float = 1e-3) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[Tensor, Array],
    state: AdamState,
) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, applied to parameter data in place.

    Parameters missing from ``grads`` receive a zero gradient (their moments
    still decay). Leaf tensors are updated between tapes, never inside one.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params

"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is built as ops run (define-by-run). Every op output that depends
on a ``requires_grad`` input remembers its parents and a closure mapping the
upstream gradient to one gradient per parent. :func:`backward` replays the
recorded ops in exact reverse construction order.

Only scalar-vs-tensor broadcasting is supported, plus the dedicated
row-bias op :func:`add_bias` used by dense layers.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError

LOG_CLAMP = 1e-12

_seq = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them, e.g. for evaluation passes."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense array with an optional gradient slot.

    Leaves created with ``requires_grad=True`` own a zero-initialised
    ``grad`` buffer that :func:`backward` accumulates into. Intermediate
    results carry no buffer of their own.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_seq")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op: str | None = None
        self._seq = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    @property
    def op(self) -> str | None:
        return self._op

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(values: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    out._op = None
    out._seq = -1
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
        out._seq = next(_seq)
    return out


class Graph:
    """The recorded ops reachable from a root, in construction order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t._op is None or id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def records(self) -> list[tuple[int, str, tuple[int, ...]]]:
        """(node seq, op kind, input seqs); leaves appear as -1."""
        return [(n._seq, n._op, tuple(p._seq for p in n._parents)) for n in self.nodes]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every ``requires_grad`` leaf's ``grad``."""
    if root.values.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    seed = np.ones_like(root.values)
    if root.is_leaf:
        root.grad += seed
        return
    graph = Graph.trace(root)
    pending: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, gp in zip(node._parents, node._backward(g)):
            if gp is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad += gp
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + gp
            else:
                pending[id(parent)] = gp


# ---------------------------------------------------------------- elementwise


def _broadcast_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not scalar-broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "add")
    return _record(a.values + b.values, (a, b), "add",
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "sub")
    return _record(a.values - b.values, (a, b), "sub",
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "mul")
    return _record(a.values * b.values, (a, b), "mul",
                   lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.values, (a,), "neg", lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return _record(np.where(mask, a.values, 0.0), (a,), "relu", lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(-np.abs(a.values))
    s = np.where(a.values >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.values)
    return _record(y, (a,), "exp", lambda g: (g * y,))


def log(a, clamp: float | None = None) -> Tensor:
    """Natural log. With ``clamp``, inputs below it are raised to it first
    and pass no gradient."""
    a = as_tensor(a)
    x = a.values
    live = np.ones(x.shape, dtype=bool)
    if clamp is not None:
        live = x > clamp
        x = np.where(live, x, clamp)
    if not np.all(x > 0):
        raise NumericDomainError("log of a non-positive or NaN value")
    return _record(np.log(x), (a,), "log", lambda g: (np.where(live, g / x, 0.0),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _record(av @ bv, (a, b), "matmul", lambda g: (g @ bv.T, av.T @ g))


def add_bias(x, b) -> Tensor:
    """``x[m, n] + b[n]`` broadcast over rows."""
    x, b = as_tensor(x), as_tensor(b)
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: {x.shape} and bias {b.shape} disagree")
    return _record(x.values + b.values, (x, b), "add_bias", lambda g: (g, g.sum(axis=0)))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _record(out, (a,), "reshape", lambda g: (g.reshape(old),))


def take_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(a.values)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.values[idx], (a,), "take_rows", bw)


def pick(a, rows, cols) -> Tensor:
    """Vector of ``a[rows[i], cols[i]]``."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if a.values.ndim != 2 or rows.shape != cols.shape:
        raise DimensionError("pick needs a matrix and equal-length index vectors")

    def bw(g):
        out = np.zeros_like(a.values)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _record(a.values[rows, cols], (a,), "pick", bw)


# ------------------------------------------------------------------ softmax


def _check_matrix(x: Tensor, op: str) -> None:
    if x.values.ndim != 2:
        raise DimensionError(f"{op} expects a matrix, got shape {x.shape}")


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    _check_matrix(x, "softmax_rows")
    z = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _record(p, (x,), "softmax_rows", bw)


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    _check_matrix(x, "log_softmax_rows")
    z = x.values - x.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record(out, (x,), "log_softmax_rows", lambda g: (g - p * g.sum(axis=1, keepdims=True),))


# ------------------------------------------------------------------ reduce


def _check_nonempty(x: Tensor, op: str) -> None:
    if x.size == 0:
        raise NumericDomainError(f"{op} of an empty tensor")


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    _check_nonempty(x, "sum")
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(np.asarray(x.values.sum(axis=axis)), (x,), "sum", bw)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    _check_nonempty(x, "mean")
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def max(x) -> Tensor:  # noqa: A001
    """Global maximum; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    _check_nonempty(x, "max")
    flat = int(np.argmax(x.values))

    def bw(g):
        out = np.zeros(x.size)
        out[flat] = g
        return (out.reshape(x.shape),)

    return _record(np.asarray(x.values.reshape(-1)[flat]), (x,), "max", bw)


def argmax_rows(x) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest index."""
    v = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if v.size == 0:
        raise NumericDomainError("argmax_rows of an empty tensor")
    if v.ndim != 2:
        raise DimensionError(f"argmax_rows expects a matrix, got shape {v.shape}")
    return np.argmax(v, axis=1)


def reduce(op: str, x, **kwargs):
    if op == "sum":
        return sum(x, **kwargs)
    if op == "mean":
        return mean(x, **kwargs)
    if op == "max":
        return max(x)
    if op == "argmax_rows":
        return argmax_rows(x)
    raise ContractError(f"unknown reduction {op!r}")


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()

"""A small tape-based reverse-mode autodiff over dense numpy arrays.

Only what the reordering pipeline needs: rank <= 2 tensors, elementwise
arithmetic with numpy broadcasting, matmul, row/column logsumexp, the
standard normal CDF and a few graph aggregation ops.

    tape = Tape()
    W = tape.param(np.random.randn(3, 3), name="W")
    loss = frobenius_sq(W @ W.T)
    grads = tape.backward(loss)
"""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "parents", "backward_fn", "name", "op")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, tape: "Tape | None" = None, requires_grad: bool = False,
                 parents: tuple = (), backward_fn: Callable | None = None,
                 name: str | None = None, op: str = "leaf"):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ValueError(f"tensors have rank <= 2, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.shape}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

    def numpy(self) -> np.ndarray:
        return self.value

    # operator sugar
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
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Records operations in execution order; ``backward`` replays them reversed."""

    def __init__(self, debug: bool = False):
        self.nodes: list[Tensor] = []
        self.params: list[Tensor] = []
        self.debug = debug

    def param(self, value, name: str | None = None) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), tape=self, requires_grad=True, name=name)
        self.params.append(t)
        return t

    def const(self, value) -> Tensor:
        return Tensor(value)

    def record(self, value, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        t = Tensor(value, tape=self, requires_grad=True, parents=tuple(parents),
                   backward_fn=backward_fn, op=op)
        self.nodes.append(t)
        return t

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` for ``params`` (default: all params).

        Parameters the loss does not depend on get a zero gradient.
        """
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        params = self.params if params is None else list(params)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = []
        for p in params:
            g = grads.get(id(p))
            if g is None:
                if self.debug:
                    logger.warning("parameter %s is disconnected from the loss", p.name or p)
                g = np.zeros_like(p.value)
            out.append(g.reshape(p.shape))
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.requires_grad:
            if tape is not None and t.tape is not tape:
                raise ValueError("tensors belong to different tapes")
            tape = t.tape
    return tape


def _make(value, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    tape = _tape_of(*parents)
    if tape is None:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        return Tensor(value, op=op)
    return tape.record(value, parents, backward_fn, op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.value == 0):
        raise ZeroDivisionError("div: zero in denominator")
    out = a.value / b.value
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)), "div")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise ValueError("log: input must be strictly positive")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise ValueError("sqrt: input must be strictly positive")
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def normal_cdf(a) -> Tensor:
    """Standard normal CDF; the adjoint is the Gaussian density."""
    a = as_tensor(a)
    x = a.value
    return _make(ndtr(x), (a,), lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * x * x),), "normal_cdf")


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; gradient passes only where the input is above the floor."""
    a = as_tensor(a)
    keep = a.value > floor
    return _make(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,), "clamp_min")


def tril_mask(a, k: int = 0) -> Tensor:
    a = as_tensor(a)
    mask = np.tril(np.ones(a.shape, dtype=bool), k)
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),), "tril")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.value @ b.value, (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def spmm(M: sp.spmatrix, a) -> Tensor:
    """Constant sparse (or dense) matrix times a tensor."""
    a = as_tensor(a)
    if a.value.ndim != 2 or M.shape[1] != a.shape[0]:
        raise ValueError(f"spmm: incompatible shapes {M.shape} and {a.shape}")
    MT = M.T
    return _make(np.asarray(M @ a.value), (a,), lambda g: (np.asarray(MT @ g),), "spmm")


def row_gather(a, idx) -> Tensor:
    """Rows ``a[idx]``; repeated indices accumulate in the adjoint."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError("row_gather: index out of range")
    return _make(a.value[idx], (a,), back, "row_gather")


def mean_neighbor_aggregate(a, adjacency: sp.spmatrix) -> Tensor:
    """Row ``v`` of the result is the mean of ``a`` over neighbors of ``v``.

    Isolated nodes aggregate to zero.
    """
    A = sp.csr_matrix(adjacency, dtype=np.float64, copy=True)
    A.data[:] = 1.0
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return spmm(sp.diags(inv) @ A, a)


# ---------------------------------------------------------------- reductions

def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))


def logsumexp_rows(a) -> Tensor:
    """Per-row logsumexp, shape ``(n, 1)``."""
    a = as_tensor(a)
    out = _logsumexp(a.value, axis=1)
    return _make(out, (a,), lambda g: (g * np.exp(a.value - out),), "logsumexp_rows")


def logsumexp_cols(a) -> Tensor:
    """Per-column logsumexp, shape ``(1, m)``."""
    a = as_tensor(a)
    out = _logsumexp(a.value, axis=0)
    return _make(out, (a,), lambda g: (g * np.exp(a.value - out),), "logsumexp_cols")


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),), "sum_all")


def frobenius_sq(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(np.sum(a.value * a.value)), (a,),
                 lambda g: (2.0 * float(g) * a.value,), "frobenius_sq")


def trace_of_product(a, b) -> Tensor:
    """``trace(a.T @ b)``, i.e. the Frobenius inner product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"trace_of_product: shapes {a.shape} and {b.shape} differ")
    return _make(np.asarray(np.sum(a.value * b.value)), (a, b),
                 lambda g: (float(g) * b.value, float(g) * a.value), "trace_of_product")

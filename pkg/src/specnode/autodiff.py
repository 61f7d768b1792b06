"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it when at
least one input is tracked (a parameter with ``requires_grad`` or an output
already recorded on the same tape).  :func:`backward` then walks the tape in
reverse order, so every node is visited once and its inputs always precede it.

Broadcasting follows a single rule: two operands are compatible when their
shapes are equal, when one is a scalar, or when one shape is a trailing suffix
of the other.  Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

ACTIVATIONS = ("relu", "tanh", "sin", "sigmoid", "identity")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


_TAPES: list = []
_DEBUG = [False]


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any op produces NaN/Inf."""
    previous = _DEBUG[0]
    _DEBUG[0] = enabled
    try:
        yield
    finally:
        _DEBUG[0] = previous


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes.clear()


@contextlib.contextmanager
def no_grad():
    """Suspend recording on any active tape."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Dense float64 array with optional attachment to a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def tracked_on(self, tape) -> bool:
        return self.requires_grad or (tape is not None and self._tape is tape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, index: getitem(self, index)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, what: str):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {what}")


def _emit(data, inputs: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    if _DEBUG[0]:
        _check_finite(np.asarray(data), what)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.tracked_on(tape) for t in inputs):
        out._tape = tape
        tape.nodes.append(_Node(out, tuple(inputs), backward))
    return out


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b or len(b) == 0:
        return a
    if len(a) == 0:
        return b
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if long_[len(long_) - len(short):] == short:
        return long_
    raise ShapeError(f"shapes {a} and {b} are not trailing-axis compatible")


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# ----------------------------------------------------------------- binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_sum_to(g, sa), _sum_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_sum_to(g, sa), -_sum_to(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _sum_to(g * bd, ad.shape), _sum_to(g * ad, bd.shape)

    return _emit(ad * bd, (a, b), backward, "mul")


def hadamard(a, b) -> Tensor:
    """Elementwise product; ``b`` may broadcast along trailing axes."""
    return mul(a, b)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _sum_to(g / bd, ad.shape), _sum_to(-g * out / bd, bd.shape)

    return _emit(out, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    """Batched matrix product of operands with at least two axes.

    Batch axes follow the trailing-suffix broadcasting rule.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def backward(g):
        ga = _sum_to(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _sum_to(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit(ad @ bd, (a, b), backward, "matmul")


def matmul_rowwise(x, B) -> Tensor:
    """Multiply every row (last axis) of ``x`` by the square matrix ``B``."""
    x, B = as_tensor(x), as_tensor(B)
    if B.ndim != 2 or x.ndim < 1 or x.shape[-1] != B.shape[0]:
        raise ShapeError(f"cannot multiply rows of {x.shape} by {B.shape}")
    if x.ndim == 1:
        return reshape(matmul(reshape(x, (1, -1)), B), (B.shape[1],))
    return matmul(x, B)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    p = float(exponent)
    if p == 2.0:
        return _emit(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")
    return _emit(ad ** p, (a,), lambda g: (p * g * ad ** (p - 1.0),), "power")


# ------------------------------------------------------------------ unary ops


def sin(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _emit(np.sin(xd), (x,), lambda g: (g * np.cos(xd),), "sin")


def cos(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _emit(np.cos(xd), (x,), lambda g: (-g * np.sin(xd),), "cos")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit(out, (x,), lambda g: (g * out,), "exp")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def activation(x, kind: str) -> Tensor:
    """Apply one of ``relu | tanh | sin | sigmoid | identity``."""
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "sin":
        return sin(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity":
        return as_tensor(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def expm(x) -> Tensor:
    """Matrix exponential of a square matrix (scaling and squaring).

    The adjoint uses the Frechet derivative at the transpose:
    ``<G, L(A, E)> = <L(A^T, G), E>``.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"expm needs a square matrix, got {x.shape}")
    xd = x.data

    def backward(g):
        return (scipy.linalg.expm_frechet(xd.T, g, compute_expm=False),)

    return _emit(scipy.linalg.expm(xd), (x,), backward, "expm")


# -------------------------------------------------------------- shape ops


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _emit(np.swapaxes(x.data, a, b), (x,),
                 lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
               for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _emit(x.data[index], (x,), backward, "getitem")


def take(x, indices, axis: int) -> Tensor:
    """Gather entries of ``x`` along ``axis`` (scatter-add on the way back)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.shape
    ax = axis % x.ndim

    def backward(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (full,)

    return _emit(np.take(x.data, idx, axis=ax), (x,), backward, "take")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if len({t.shape for t in ts}) != 1:
        raise ShapeError("stack needs equally shaped tensors")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _emit(out, ts, backward, "stack")


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit(out, ts, backward, "concatenate")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# --------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape | None = None,
             params: Iterable[Tensor] | None = None,
             retain: bool = False) -> dict:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns a dict mapping each leaf parameter (``requires_grad``) to its
    gradient array, and stores the same array on ``param.grad``.  When
    ``params`` is given the map contains exactly those tensors, with zero
    gradients for parameters the loss does not depend on.  The tape is
    cleared afterwards unless ``retain`` is set.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise TapeError("backward needs a scalar Tensor loss")
    tape = tape if tape is not None else loss._tape
    wanted = list(params) if params is not None else None
    on_tape = tape is not None and loss._tape is tape
    if not on_tape:
        if wanted is None:
            raise TapeError("loss was not recorded on the given tape")
        grads = {p: np.zeros(p.shape) for p in wanted}
        for p, g in grads.items():
            p.grad = g
        return grads

    acc = {id(loss): np.ones(loss.shape)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = acc.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.tracked_on(tape):
                continue
            key = id(inp)
            if inp.requires_grad and inp._tape is not tape:
                leaves[key] = inp
            if key in acc:
                acc[key] = acc[key] + gi
            else:
                acc[key] = np.asarray(gi, dtype=np.float64)
    if not retain:
        tape.reset()

    if wanted is None:
        wanted = list(leaves.values())
    grads = {}
    for p in wanted:
        g = acc.get(id(p))
        grads[p] = np.zeros(p.shape) if g is None else g.reshape(p.shape)
        p.grad = grads[p]
    return grads


def grad_check(f: Callable[[Tensor], Tensor], params: Tensor, h: float = 1e-5,
               indices: Sequence[int] | None = None) -> float:
    """Largest relative gap between autodiff and central differences.

    The gap per coordinate is ``|ad - fd| / (|fd| + 1e-12)``.  ``indices``
    restricts the check to a subset of flat coordinates of ``params``.
    """
    with Tape() as tape:
        loss = f(params)
    if not np.all(np.isfinite(as_tensor(loss).data)):
        raise NonFiniteError("objective is not finite at the base point")
    ad = backward(as_tensor(loss), tape, params=[params])[params].reshape(-1)
    flat = params.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in coords:
            saved = flat[i]
            flat[i] = saved + h
            fp = float(as_tensor(f(params)).data)
            flat[i] = saved - h
            fm = float(as_tensor(f(params)).data)
            flat[i] = saved
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"objective not finite when perturbing coordinate {i}")
            fd = (fp - fm) / (2.0 * h)
            worst = max(worst, abs(ad[i] - fd) / (abs(fd) + 1e-12))
    return worst

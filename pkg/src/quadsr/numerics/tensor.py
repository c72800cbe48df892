"""Tape-based reverse-mode differentiation over a small set of array primitives.

Usage::

    with Tape() as tape:
        loss = mean(square(matmul(x, w) - y))
    (gw,) = tape.gradient(loss, [w])

Operations executed while a tape is active, and touching at least one tensor
with ``requires_grad=True``, are recorded together with a closure that maps
the output cotangent to input cotangents. Outside a tape every primitive is
a thin wrapper around numpy.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NumericError

_local = threading.local()

# Optional matmul multiply-accumulate counter, used by FLOPs accounting tests.
_mac_counter = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    """An ndarray plus gradient-tracking metadata."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


class Tape:
    """Records primitive applications for one reverse sweep.

    A tape is single-writer; each thread has its own stack of active tapes.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, out: Tensor, parents: tuple, backward: Callable) -> None:
        self.records.append((out, parents, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` with respect to each of ``sources``.

        Sources the target does not depend on receive exact zeros.
        """
        if target.data.size != 1:
            raise DimensionError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, parents, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros_like(s.data) if g is None else np.asarray(g, dtype=s.dtype).reshape(s.shape))
        return out


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _wrap(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, (int, float)):
        # Python scalars stay weakly typed so float32 graphs stay float32.
        return x
    return np.asarray(x)


def _ub(g: np.ndarray, parent, shape) -> np.ndarray | None:
    if not (isinstance(parent, Tensor) and parent.requires_grad):
        return None
    return _unbroadcast(g, shape)


# --- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a_, b_ = _data(a), _data(b)
    sa, sb = np.shape(a_), np.shape(b_)
    return _wrap(a_ + b_, (a, b), lambda g: (_ub(g, a, sa), _ub(g, b, sb)))


def sub(a, b) -> Tensor:
    a_, b_ = _data(a), _data(b)
    sa, sb = np.shape(a_), np.shape(b_)
    return _wrap(a_ - b_, (a, b), lambda g: (_ub(g, a, sa), _ub(-g, b, sb)))


def mul(a, b) -> Tensor:
    a_, b_ = _data(a), _data(b)
    sa, sb = np.shape(a_), np.shape(b_)
    return _wrap(a_ * b_, (a, b), lambda g: (_ub(g * b_, a, sa), _ub(g * a_, b, sb)))


def div(a, b) -> Tensor:
    a_, b_ = _data(a), _data(b)
    sa, sb = np.shape(a_), np.shape(b_)
    out = a_ / b_
    return _wrap(out, (a, b), lambda g: (_ub(g / b_, a, sa), _ub(-g * out / b_, b, sb)))


def neg(a) -> Tensor:
    return _wrap(-_data(a), (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a_ = _data(a)
    return _wrap(a_ * a_, (a,), lambda g: (2.0 * a_ * g,))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    x = _data(a)
    x2 = x * x
    u = _GELU_C * (x + 0.044715 * x2 * x)
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)

    return _wrap(out, (a,), backward)


def silu(a) -> Tensor:
    x = _data(a)
    sig = 1.0 / (1.0 + np.exp(-x))
    return _wrap(x * sig, (a,), lambda g: (g * sig * (1.0 + x * (1.0 - sig)),))


# --- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a_, b_ = _data(a), _data(b)
    if a_.ndim < 2 or b_.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a_.shape[-1] != b_.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a_.shape} @ {b_.shape}")
    out = np.matmul(a_, b_)
    counter = getattr(_mac_counter, "value", None)
    if counter is not None:
        _mac_counter.value = counter + out.size * a_.shape[-1]

    def backward(g):
        ga = gb = None
        if isinstance(a, Tensor) and a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b_, -1, -2)), a_.shape)
        if isinstance(b, Tensor) and b.requires_grad:
            if b_.ndim == 2:
                # Shared weight matrix: fold all leading axes into one product.
                gb = a_.reshape(-1, a_.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a_, -1, -2), g), b_.shape)
        return ga, gb

    return _wrap(out, (a, b), backward)


class count_macs:
    """Context manager tallying multiply-accumulates performed by ``matmul``."""

    def __enter__(self) -> "count_macs":
        self._prev = getattr(_mac_counter, "value", None)
        _mac_counter.value = 0
        self.total = 0
        return self

    def __exit__(self, *exc):
        self.total = _mac_counter.value
        _mac_counter.value = self._prev
        return False


# --- reductions ----------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _data(a)
    axes = _norm_axes(axis, x.ndim)
    out = x.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _wrap(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    x = _data(a)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[i] for i in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


# --- shape ---------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    x = _data(a)
    return _wrap(x.reshape(shape), (a,), lambda g: (g.reshape(x.shape),))


def transpose(a, axes=None) -> Tensor:
    x = _data(a)
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _wrap(x.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def index(a, idx) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with accumulation."""
    x = _data(a)
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(x, dtype=g.dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _wrap(x[idx], (a,), backward)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is Ellipsis or i is None for i in items)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices ``indices`` along ``axis``."""
    x = _data(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    unique = len(np.unique(indices)) == indices.size

    def backward(g):
        full = np.zeros_like(x, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        if unique:
            moved[indices] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _wrap(np.take(x, indices, axis=axis), (a,), backward)


def scatter(a, indices, size: int, axis: int = 0) -> Tensor:
    """Place slices of ``a`` at positions ``indices`` of a zero array of length ``size`` along ``axis``.

    Indices must be unique. The adjoint of :func:`take`.
    """
    x = _data(a)
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.dtype)
    np.moveaxis(out, axis, 0)[indices] = np.moveaxis(x, axis, 0)
    return _wrap(out, (a,), lambda g: (np.take(g, indices, axis=axis),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    arrays = [_data(t) for t in tensors]
    axis = axis % arrays[0].ndim
    bounds = np.cumsum([0] + [arr.shape[axis] for arr in arrays])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _wrap(np.concatenate(arrays, axis=axis), tuple(tensors), backward)


# --- normalisation -------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    x = _data(a)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _wrap(out, (a,), backward)


def layer_norm(a, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean, unit variance (no affine terms)."""
    x = _data(a)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _wrap(xhat, (a,), backward)


def check_finite(x, what: str = "value") -> None:
    arr = _data(x)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")

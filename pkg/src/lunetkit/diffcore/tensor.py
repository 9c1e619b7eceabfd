"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tape records every differentiable operation executed while it is the
active context; backward() replays the records in reverse, accumulating
adjoints into Tensor.grad buffers. Only the layer vocabulary the model
needs is implemented, with analytic adjoints throughout.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

from ..errors import NotScalarLoss, ShapeMismatch

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed ops; confined to one worker thread."""

    def __init__(self):
        self._entries = []  # (out, pull) appended in execution order

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, out: "Tensor", pull) -> None:
        self._entries.append((out, pull))


class Tensor:
    """N-dimensional value array participating in differentiation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data, dtype=g.dtype)
        self.grad += g

    def detach(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all routing through the module-level ops

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _binary_shapes(a: Tensor, b: Tensor) -> None:
    # only same-shape or scalar operands; no general broadcasting
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"operand shapes {a.shape} vs {b.shape}")


def _emit(out: Tensor, inputs: tuple, pull) -> Tensor:
    """Register the backward rule when a tape is live and grads are needed."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, pull)
    return out


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # undo scalar broadcasting in binary ops
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-order adjoint accumulation from a scalar loss."""
    if loss.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    loss.accumulate(np.ones_like(loss.data))
    for out, pull in reversed(tape._entries):
        if out.grad is not None:
            pull(out.grad)


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    out = Tensor(a.data + b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g, b.shape))

    return _emit(out, (a, b), pull)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    out = Tensor(a.data - b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(-g, b.shape))

    return _emit(out, (a, b), pull)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    out = Tensor(a.data * b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * a.data, b.shape))

    return _emit(out, (a, b), pull)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    out = Tensor(a.data / b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _emit(out, (a, b), pull)


def absolute(a: Tensor) -> Tensor:
    """|a|, with subgradient 0 at exactly 0."""
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data))

    def pull(g):
        if a.requires_grad:
            a.accumulate(g * np.sign(a.data))

    return _emit(out, (a,), pull)


def maximum(a, b) -> Tensor:
    """Elementwise max; gradient follows the winning branch (a on ties)."""
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * take_a, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * ~take_a, b.shape))

    return _emit(out, (a, b), pull)


def minimum(a, b) -> Tensor:
    """Elementwise min; gradient follows the winning branch (a on ties)."""
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    _binary_shapes(a, b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def pull(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * take_a, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * ~take_a, b.shape))

    return _emit(out, (a, b), pull)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0
    out = Tensor(np.where(keep, a.data, 0.0))

    def pull(g):
        if a.requires_grad:
            a.accumulate(g * keep)

    return _emit(out, (a,), pull)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = expit(a.data).astype(a.dtype, copy=False)
    out = Tensor(y)

    def pull(g):
        if a.requires_grad:
            a.accumulate(g * y * (1.0 - y))

    return _emit(out, (a,), pull)


def channel_softmax(a: Tensor, axis: int = 1) -> Tensor:
    """Softmax over the class axis; per-pixel class values sum to 1."""
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def pull(g):
        if a.requires_grad:
            dot = np.sum(g * y, axis=axis, keepdims=True)
            a.accumulate(y * (g - dot))

    return _emit(out, (a,), pull)


# --- reductions and shape ops ---------------------------------------------


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axes))

    def pull(g):
        if a.requires_grad:
            if axes is None:
                a.accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axes), a.shape).copy())

    return _emit(out, (a,), pull)


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axes is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axes)])
    return mul(reduce_sum(a, axes), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def pull(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return _emit(out, (a,), pull)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis
        ):
            raise ShapeMismatch(f"concat shapes {[t.shape for t in tensors]} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _emit(out, tuple(tensors), pull)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def pull(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[idx] = g
            a.accumulate(buf)

    return _emit(out, (a,), pull)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation for NCHW feature maps (the U-Net skip join)."""
    if len(a.shape) != 4 or len(b.shape) != 4:
        raise ShapeMismatch(f"concat_channels needs NCHW, got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x[N,D_in] @ weights[D_out,D_in].T + bias[D_out]."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if (
        len(x.shape) != 2
        or len(weights.shape) != 2
        or x.shape[1] != weights.shape[1]
        or bias.shape != (weights.shape[0],)
    ):
        raise ShapeMismatch(
            f"dense shapes x{x.shape} w{weights.shape} b{bias.shape}"
        )
    out = Tensor(x.data @ weights.data.T + bias.data)

    def pull(g):
        if x.requires_grad:
            x.accumulate(g @ weights.data)
        if weights.requires_grad:
            weights.accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return _emit(out, (x, weights, bias), pull)

"""Differentiable primitives.

Every primitive computes its output eagerly with numpy and, when an input
requires a gradient and a tape is active, records a closure that maps the
upstream gradient to one gradient per input.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from langcl.core.errors import ShapeError
from langcl.core.tensor import DTYPE, BackwardFn, Tensor, active_tape


def emit(
    op: str, inputs: tuple[Tensor, ...], value: np.ndarray, backward: BackwardFn
) -> Tensor:
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs_grad)
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(op, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: cannot broadcast shapes {a.shape} and {b.shape}"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return emit(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return emit(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    return emit(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with the rows of the 2-D ``w``."""
    if w.data.ndim != 2 or x.data.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: cannot contract {x.shape} with {w.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        return gx, gw

    return emit("matmul", (x, w), x.data @ w.data, backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def square(a: Tensor) -> Tensor:
    return emit("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return emit("exp", (a,), y, lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ShapeError("log: input must be strictly positive")
    return emit("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return emit("sum", (a,), np.asarray(a.data.sum(axis=axis)), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return emit("softmax", (a,), y, backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return emit("log_softmax", (a,), y, backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(g, splits, axis=axis))

    return emit("concat", tuple(tensors), value, backward)


def shift_time(a: Tensor, steps: int) -> Tensor:
    """Delay along the time axis (second to last) by ``steps`` frames, zero-filled."""
    if a.data.ndim < 2:
        raise ShapeError(f"shift_time: need a time axis, got shape {a.shape}")
    if steps == 0:
        return a
    frames = a.shape[-2]
    value = np.zeros_like(a.data)
    if steps < frames:
        value[..., steps:, :] = a.data[..., : frames - steps, :]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(g)
        if steps < frames:
            grad[..., : frames - steps, :] = g[..., steps:, :]
        return (grad,)

    return emit("shift_time", (a,), value, backward)


def threshold_mask(real: Tensor, threshold: float) -> Tensor:
    """Binary mask ``real > threshold`` with a straight-through backward."""
    value = (real.data > threshold).astype(DTYPE)
    return emit("threshold_mask", (real,), value, lambda g: (g,))


def constant(value: np.ndarray) -> Tensor:
    return Tensor(value, requires_grad=False)

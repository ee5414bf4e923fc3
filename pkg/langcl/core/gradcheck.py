"""Central finite-difference gradient oracle."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from langcl.core.tensor import Tape, Tensor


def numeric_grad(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-4) -> np.ndarray:
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        upper = fn().item()
        flat[i] = original - eps
        lower = fn().item()
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * eps)
    return grad


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for tensor in tensors:
        tensor.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-4,
) -> float:
    """Worst relative error between tape gradients and finite differences.

    ``fn`` must rebuild the scalar loss from the current values of ``tensors``.
    """
    analytic = analytic_grads(fn, tensors)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic, strict=True):
        worst = max(worst, relative_error(grad, numeric_grad(fn, tensor, eps)))
    return worst

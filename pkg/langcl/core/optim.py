"""AdamW, gradient-norm clipping and plateau learning-rate decay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from langcl.core.errors import ConfigError
from langcl.core.params import ParamStore

logger = logging.getLogger(__name__)

CLIP_SLACK = 1e-12


@dataclass
class OptimState:
    lr: float = 1e-4
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    best: float = math.inf
    # Learning-rate multipliers by parameter-name prefix.
    lr_scales: dict[str, float] = field(default_factory=dict)
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    def scale_for(self, name: str) -> float:
        for prefix, factor in self.lr_scales.items():
            if name.startswith(prefix):
                return factor
        return 1.0


def optim_step(params: ParamStore, state: OptimState) -> None:
    """One AdamW update over every trainable parameter, then zero the gradients."""
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step

    for name in params.trainable():
        tensor = params[name]
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or m.shape != tensor.shape:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        assert v is not None
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v

        lr = state.lr * state.scale_for(name)
        if state.weight_decay:
            tensor.data = tensor.data - lr * state.weight_decay * tensor.data
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        tensor.data = tensor.data - lr * update

    params.zero_grad()


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping. Norms within rounding of
    ``max_norm`` are left alone, so clipping twice equals clipping once.
    """
    grads = [params[n].grad for n in params.trainable()]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if total > max_norm * (1.0 + CLIP_SLACK):
        factor = max_norm / total
        for grad in grads:
            if grad is not None:
                grad *= factor
    return total


def plateau_decay(state: OptimState, val_metric: float, factor: float) -> float:
    """Decay the learning rate when the validation error fails to improve.

    Lower is better; a tie counts as no improvement.
    """
    if not 0.0 < factor < 1.0:
        raise ConfigError(f"plateau factor must be in (0, 1), got {factor}")
    if val_metric >= state.best:
        state.lr *= factor
        logger.debug(f"no improvement ({val_metric:.4f}), lr decayed to {state.lr:.3g}")
    state.best = min(state.best, val_metric)
    return state.lr

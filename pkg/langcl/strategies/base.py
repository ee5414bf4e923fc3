"""The lifecycle every continual-learning strategy implements.

For each new task the harness calls, in order::

    plan = strategy.prepare_task(model, task, history)
    # per batch: loss = strategy.loss_hook(loss, batch, model)
    #            backward, then strategy.grad_hook(model, batch)
    state = strategy.finalize_task(model, task, history)
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import ClassVar

from langcl.core.config import StrategyConfig
from langcl.core.model import SeqModel
from langcl.core.synth import LanguageData, Utterance
from langcl.core.tensor import Tensor
from langcl.core.trainer import Batch
from langcl.strategies.state_io import StrategyState

logger = logging.getLogger(__name__)

Resolver = Callable[[str], Utterance]


@dataclass
class TrainPlan:
    task_id: str
    train: list[Utterance]
    val: list[Utterance]


class Strategy:
    kind: ClassVar[str] = ""

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        self.config = config
        self.seed = seed

    def on_base_trained(self, model: SeqModel, base: Sequence[LanguageData]) -> None:
        """Called once with the pretrained base model, before the first new task."""

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        return TrainPlan(task.lang, list(task.train), list(task.val))

    def loss_hook(self, base_loss: Tensor, batch: Batch, model: SeqModel) -> Tensor:
        return base_loss

    def grad_hook(self, model: SeqModel, batch: Batch) -> None:
        """Runs after backward and before gradient clipping."""

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        return self.state_dict()

    def lr_scales(self) -> dict[str, float]:
        return {}

    def state_dict(self) -> StrategyState:
        return StrategyState(self.kind)

    def load_state_dict(
        self, state: StrategyState, model: SeqModel, resolve: Resolver
    ) -> None:
        """Restore from ``state``; ``resolve`` maps utterance ids back to data."""


def retained_count(ratio: float, size: int) -> int:
    """round(ratio * size), halves rounded up."""
    return int(ratio * size + 0.5)

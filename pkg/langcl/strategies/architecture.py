"""Strategies that add task-specific parameters and never touch the base ones."""

from __future__ import annotations

import logging
from collections.abc import Sequence

from langcl.core.adapters import Adapter, PiggybackMask, PnnColumn, PromptEntry
from langcl.core.config import StrategyConfig
from langcl.core.model import SHARED, SeqModel
from langcl.core.synth import LanguageData
from langcl.strategies.base import Resolver, Strategy, TrainPlan
from langcl.strategies.state_io import StrategyState

logger = logging.getLogger(__name__)


class ArchitectureStrategy(Strategy):
    """Freeze everything, then train only the new task's adapter and its language slot."""

    uses_task_slot = True

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.tasks: list[str] = []

    def make_adapter(self, model: SeqModel, task_id: str) -> Adapter:
        raise NotImplementedError

    def task_slot(self, model: SeqModel, task_id: str) -> list[str]:
        """The language row (shared regime) or head (per-language) of ``task_id``."""
        if not self.uses_task_slot:
            return []
        if model.regime == SHARED:
            return [model.lang_rows[task_id]]
        head = model.head_for(task_id)
        return [head.weight, head.bias]

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        model.params.freeze_all()
        adapter = self.make_adapter(model, task.lang)
        model.add_adapter(adapter, pb_init=self.config.pb_init, noise=self.config.l2p_noise)
        trainable = [*adapter.param_names(), *self.task_slot(model, task.lang)]
        model.params.set_frozen(trainable, False)
        logger.info(
            f"{self.kind}: {model.params.num_values(trainable)} trainable values for {task.lang}"
        )
        return TrainPlan(task.lang, list(task.train), list(task.val))

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        model.params.freeze_all()
        if task.lang not in self.tasks:
            self.tasks.append(task.lang)
        return self.state_dict()

    def state_dict(self) -> StrategyState:
        return StrategyState(self.kind, {"tasks": list(self.tasks)})

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        self.tasks = list(state.meta.get("tasks", []))


class ProgressiveColumns(ArchitectureStrategy):
    """One gated layer and projection per task on top of the frozen encoder."""

    kind = "PNN"
    uses_task_slot = False

    def make_adapter(self, model: SeqModel, task_id: str) -> Adapter:
        return PnnColumn(task_id)


class Piggyback(ArchitectureStrategy):
    """Learns a binary mask over the last encoder layer (and the shared head)."""

    kind = "PB"

    def make_adapter(self, model: SeqModel, task_id: str) -> Adapter:
        return PiggybackMask(
            task_id, self.config.pb_threshold, model.piggyback_targets(task_id)
        )

    def lr_scales(self) -> dict[str, float]:
        return {"pb.": self.config.pb_lr_scale}

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        adapter = model.adapters[task.lang]
        if isinstance(adapter, PiggybackMask) and not adapter.finalized:
            adapter.finalize(model.params)
        return super().finalize_task(model, task, history)


class PromptLearning(ArchitectureStrategy):
    """A per-task prompt matrix applied to the encoder output."""

    kind = "L2P"

    def make_adapter(self, model: SeqModel, task_id: str) -> Adapter:
        return PromptEntry(task_id)

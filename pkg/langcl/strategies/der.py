"""Dark experience replay: replay plus a logit-matching penalty."""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from langcl.core import ops
from langcl.core.config import StrategyConfig
from langcl.core.errors import StrategyError
from langcl.core.model import SeqModel
from langcl.core.synth import LanguageData
from langcl.core.tensor import Tensor, no_grad
from langcl.core.trainer import EVAL_BATCH, Batch, collate
from langcl.strategies.base import Resolver, TrainPlan
from langcl.strategies.replay import ReplayStrategy
from langcl.strategies.state_io import StrategyState, split_prefixed

logger = logging.getLogger(__name__)


def logit_matching_loss(logits: Tensor, stored: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared difference over the frames where ``mask`` (batch, time) is 1."""
    count = float(mask.sum()) * logits.shape[-1]
    if count == 0:
        return ops.scale(ops.sum_(logits), 0.0)
    diff = ops.sub(logits, ops.constant(stored))
    weighted = ops.mul(ops.square(diff), ops.constant(mask[:, :, None]))
    return ops.scale(ops.sum_(weighted), 1.0 / count)


class DER(ReplayStrategy):
    kind = "DER"

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.logits: dict[str, np.ndarray] = {}
        self._prepared = False

    def remember(self, model: SeqModel, task: LanguageData) -> None:
        """Keep samples of ``task`` with the logits ``model`` gives them now."""
        if task.lang in self.buffer:
            return
        kept = self.buffer.add(task)
        with no_grad():
            for start in range(0, len(kept), EVAL_BATCH):
                chunk = kept[start : start + EVAL_BATCH]
                features, lengths = collate(chunk)
                out = model.forward(features, task.lang)
                for i, utt in enumerate(chunk):
                    self.logits[utt.id] = out.logits.data[i, : lengths[i]].copy()

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        self.sync_history(model, history)
        self._prepared = True
        return self.replay_plan(task)

    def loss_hook(self, base_loss: Tensor, batch: Batch, model: SeqModel) -> Tensor:
        if not self._prepared:
            raise StrategyError("DER loss requested before prepare_task")
        replayed = [i for i, u in enumerate(batch.utterances) if u.id in self.logits]
        if not replayed or batch.output is None:
            return base_loss
        logits = batch.output.logits
        stored = np.zeros(logits.shape)
        mask = np.zeros(logits.shape[:2])
        for i in replayed:
            target = self.logits[batch.utterances[i].id]
            frames = min(target.shape[0], batch.lengths[i])
            stored[i, :frames] = target[:frames]
            mask[i, :frames] = 1.0
        penalty = logit_matching_loss(logits, stored, mask)
        return ops.add(base_loss, ops.scale(penalty, self.config.der_alpha))

    def state_dict(self) -> StrategyState:
        state = super().state_dict()
        state.arrays = {f"logits/{k}": v for k, v in self.logits.items()}
        return state

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        super().load_state_dict(state, model, resolve)
        self.logits = split_prefixed(state.arrays, "logits/")

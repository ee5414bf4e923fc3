"""Averaged gradient episodic memory."""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from langcl.core.config import StrategyConfig
from langcl.core.model import SeqModel
from langcl.core.seeds import stream
from langcl.core.synth import LanguageData
from langcl.core.tensor import Tape
from langcl.core.trainer import Batch, mixed_batch_loss
from langcl.strategies.base import Resolver, TrainPlan
from langcl.strategies.replay import ReplayStrategy
from langcl.strategies.state_io import StrategyState

logger = logging.getLogger(__name__)


def project_gradient(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Remove the component of ``g`` that opposes ``g_ref``.

    Returns ``g`` itself when the two agree or when ``g_ref`` is zero.
    """
    dot = float(g @ g_ref)
    ref_norm = float(g_ref @ g_ref)
    if dot >= 0.0 or ref_norm == 0.0:
        return g
    return g - (dot / ref_norm) * g_ref


class AGEM(ReplayStrategy):
    kind = "AGEM"

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.batch_size = config.agem_batch_size
        self.min_dots: dict[str, float] = {}
        self._rng = stream(seed, "agem")
        self._task = ""

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        self.sync_history(model, history)
        self._rng = stream(self.seed, "agem", task.lang)
        self._task = task.lang
        return TrainPlan(task.lang, list(task.train), list(task.val))

    def grad_hook(self, model: SeqModel, batch: Batch) -> None:
        if not len(self.buffer):
            return
        params = model.params
        names = params.trainable()
        g = params.flat_grad(names)

        reference = self.buffer.draw(self._rng, self.batch_size or len(batch.utterances))
        params.zero_grad()
        with Tape() as tape:
            loss = mixed_batch_loss(model, reference)
        tape.backward(loss)
        g_ref = params.flat_grad(names)

        projected = project_gradient(g, g_ref)
        params.set_flat_grad(names, projected)
        dot = float(projected @ g_ref)
        self.min_dots[self._task] = min(self.min_dots.get(self._task, np.inf), dot)

    def state_dict(self) -> StrategyState:
        state = super().state_dict()
        state.meta["min_dots"] = dict(self.min_dots)
        return state

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        super().load_state_dict(state, model, resolve)
        self.min_dots = {k: float(v) for k, v in state.meta.get("min_dots", {}).items()}

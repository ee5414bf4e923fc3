"""Rehearsal: a per-task replay buffer and experience replay (ER)."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from langcl.core.config import StrategyConfig
from langcl.core.model import SeqModel
from langcl.core.seeds import stream
from langcl.core.synth import LanguageData, Utterance
from langcl.strategies.base import Resolver, Strategy, TrainPlan, retained_count
from langcl.strategies.state_io import StrategyState

logger = logging.getLogger(__name__)


@dataclass
class ReplayBuffer:
    """A seeded fraction of each past task's training and validation sets.

    Selection for a task depends only on (seed, task id, ratio), so the same
    history always yields the same buffer.
    """

    ratio: float
    seed: int = 0
    samples: dict[str, list[Utterance]] = field(default_factory=dict)
    held_out: dict[str, list[Utterance]] = field(default_factory=dict)

    def __contains__(self, lang: object) -> bool:
        return lang in self.samples

    def _pick(self, items: list[Utterance], label: str, lang: str) -> list[Utterance]:
        count = retained_count(self.ratio, len(items))
        rng = stream(self.seed, label, lang)
        picked = np.sort(rng.choice(len(items), size=count, replace=False))
        return [items[i] for i in picked]

    def add(self, task: LanguageData) -> list[Utterance]:
        if task.lang in self.samples:
            return self.samples[task.lang]
        self.samples[task.lang] = self._pick(task.train, "replay", task.lang)
        self.held_out[task.lang] = self._pick(task.val, "replay-val", task.lang)
        logger.debug(
            f"buffer keeps {len(self.samples[task.lang])}/{len(task.train)} utterances of {task.lang}"
        )
        return self.samples[task.lang]

    def all(self, exclude: str | None = None) -> list[Utterance]:
        return [u for lang, items in self.samples.items() if lang != exclude for u in items]

    def validation(self, exclude: str | None = None) -> list[Utterance]:
        return [u for lang, items in self.held_out.items() if lang != exclude for u in items]

    def __len__(self) -> int:
        return sum(len(v) for v in self.samples.values())

    def draw(self, rng: np.random.Generator, size: int) -> list[Utterance]:
        pool = self.all()
        if not pool:
            return []
        picked = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
        return [pool[i] for i in np.sort(picked)]

    def to_meta(self) -> dict[str, dict[str, list[str]]]:
        return {
            "train": {lang: [u.id for u in items] for lang, items in self.samples.items()},
            "val": {lang: [u.id for u in items] for lang, items in self.held_out.items()},
        }

    def load_meta(self, meta: dict[str, dict[str, list[str]]], resolve: Resolver) -> None:
        self.samples = {
            lang: [resolve(i) for i in ids] for lang, ids in meta.get("train", {}).items()
        }
        self.held_out = {
            lang: [resolve(i) for i in ids] for lang, ids in meta.get("val", {}).items()
        }


class ReplayStrategy(Strategy):
    """Shared buffer bookkeeping for ER, A-GEM and DER."""

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.buffer = ReplayBuffer(config.replay_ratio, seed)

    def remember(self, model: SeqModel, task: LanguageData) -> None:
        self.buffer.add(task)

    def on_base_trained(self, model: SeqModel, base: Sequence[LanguageData]) -> None:
        for task in base:
            self.remember(model, task)

    def sync_history(self, model: SeqModel, history: Sequence[LanguageData]) -> None:
        for past in history:
            if past.lang not in self.buffer:
                self.remember(model, past)

    def replay_plan(self, task: LanguageData) -> TrainPlan:
        """Current task plus every remembered task, for training and validation."""
        train = [*task.train, *self.buffer.all(exclude=task.lang)]
        val = [*task.val, *self.buffer.validation(exclude=task.lang)]
        logger.info(
            f"{self.kind}: {len(task.train)} current + {len(train) - len(task.train)} replayed"
        )
        return TrainPlan(task.lang, train, val)

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        self.remember(model, task)
        return self.state_dict()

    def state_dict(self) -> StrategyState:
        return StrategyState(self.kind, {"buffer": self.buffer.to_meta()})

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        self.buffer.load_meta(state.meta.get("buffer", {}), resolve)


class ExperienceReplay(ReplayStrategy):
    """Mixes the buffer into the current task's training and validation sets."""

    kind = "ER"

    def prepare_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> TrainPlan:
        self.sync_history(model, history)
        return self.replay_plan(task)

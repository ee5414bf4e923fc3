"""Importance-weighted quadratic penalties: EWC and MAS."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import ClassVar, TypeVar

import numpy as np

from langcl.core import ops
from langcl.core.config import StrategyConfig
from langcl.core.errors import StrategyError
from langcl.core.model import SeqModel
from langcl.core.params import ParamStore
from langcl.core.seeds import stream
from langcl.core.synth import LanguageData, Utterance
from langcl.core.tensor import Tape, Tensor
from langcl.core.trainer import Batch, batch_loss
from langcl.strategies.base import Resolver, Strategy
from langcl.strategies.state_io import StrategyState, split_prefixed

logger = logging.getLogger(__name__)

Sample = TypeVar("Sample")

REDUCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "square": np.square,
    "abs": np.abs,
}


@dataclass
class ImportanceMap:
    """Per-parameter importance and the values it anchors to."""

    omega: dict[str, np.ndarray] = field(default_factory=dict)
    anchor: dict[str, np.ndarray] = field(default_factory=dict)
    tasks: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.omega)

    def blend(
        self, new: dict[str, np.ndarray], alpha: float, params: ParamStore, task: str
    ) -> None:
        """omega <- alpha * omega + (1 - alpha) * new, then anchor at the current values."""
        for name, value in new.items():
            old = self.omega.get(name)
            if old is None or old.shape != value.shape:
                old = np.zeros_like(value)
            self.omega[name] = alpha * old + (1.0 - alpha) * value
            self.anchor[name] = params[name].data.copy()
        self.tasks.append(task)


def estimate_importance(
    params: ParamStore,
    samples: Sequence[Sample],
    objective: Callable[[Sample], Tensor],
    reduce: str = "square",
    names: Sequence[str] | None = None,
) -> dict[str, np.ndarray]:
    """Mean over ``samples`` of ``reduce`` applied to each sample's gradient.

    ``"square"`` gives the diagonal Fisher when ``objective`` is the task loss;
    ``"abs"`` gives MAS sensitivity when it is the squared output norm.
    """
    if reduce not in REDUCTIONS:
        raise StrategyError(f"unknown importance reduction '{reduce}'")
    fold = REDUCTIONS[reduce]
    selected = list(names) if names is not None else params.trainable()
    totals = {n: np.zeros(params[n].shape) for n in selected}
    if not samples:
        return totals
    for sample in samples:
        params.zero_grad()
        with Tape() as tape:
            value = objective(sample)
        tape.backward(value)
        for name in selected:
            totals[name] += fold(params.grad_of(name))
    params.zero_grad()
    return {n: total / len(samples) for n, total in totals.items()}


def fisher_objective(model: SeqModel) -> Callable[[Utterance], Tensor]:
    def objective(utt: Utterance) -> Tensor:
        loss, _ = batch_loss(model, [utt])
        return loss

    return objective


def output_norm_objective(model: SeqModel) -> Callable[[Utterance], Tensor]:
    def objective(utt: Utterance) -> Tensor:
        logits = model.forward(utt.features, utt.lang).logits
        return ops.sum_(ops.square(logits))

    return objective


def quadratic_penalty(params: ParamStore, imap: ImportanceMap, lam: float) -> Tensor:
    """(lam / 2) * sum of omega * (theta - anchor)**2 over the anchored parameters."""
    total: Tensor | None = None
    for name, omega in imap.omega.items():
        if name not in params or params.is_frozen(name):
            continue
        drift = ops.sub(params[name], ops.constant(imap.anchor[name]))
        term = ops.sum_(ops.mul(ops.square(drift), ops.constant(omega)))
        total = term if total is None else ops.add(total, term)
    if total is None:
        return ops.constant(np.array(0.0))
    return ops.scale(total, lam / 2.0)


class RegularizationStrategy(Strategy):
    objective: ClassVar[str] = ""
    reduce: ClassVar[str] = "square"

    def __init__(self, config: StrategyConfig, seed: int = 0) -> None:
        super().__init__(config, seed)
        self.importance = ImportanceMap()

    @property
    def lam(self) -> float:
        raise NotImplementedError

    @property
    def alpha(self) -> float:
        raise NotImplementedError

    def make_objective(self, model: SeqModel) -> Callable[[Utterance], Tensor]:
        if self.objective == "fisher":
            return fisher_objective(model)
        return output_norm_objective(model)

    def select(self, utterances: Sequence[Utterance], key: str) -> list[Utterance]:
        limit = self.config.importance_max_samples
        if limit is None or limit >= len(utterances):
            return list(utterances)
        picked = stream(self.seed, "importance", key).choice(
            len(utterances), size=limit, replace=False
        )
        return [utterances[i] for i in np.sort(picked)]

    def on_base_trained(self, model: SeqModel, base: Sequence[LanguageData]) -> None:
        update_importance(self, model, base, label="base")

    def loss_hook(self, base_loss: Tensor, batch: Batch, model: SeqModel) -> Tensor:
        if not self.importance:
            return base_loss
        return ops.add(base_loss, quadratic_penalty(model.params, self.importance, self.lam))

    def finalize_task(
        self, model: SeqModel, task: LanguageData, history: Sequence[LanguageData]
    ) -> StrategyState:
        update_importance(self, model, [task])
        return self.state_dict()

    def state_dict(self) -> StrategyState:
        arrays = {f"omega/{n}": v for n, v in self.importance.omega.items()}
        arrays.update({f"anchor/{n}": v for n, v in self.importance.anchor.items()})
        return StrategyState(self.kind, {"tasks": list(self.importance.tasks)}, arrays)

    def load_state_dict(self, state: StrategyState, model: SeqModel, resolve: Resolver) -> None:
        self.importance = ImportanceMap(
            omega=split_prefixed(state.arrays, "omega/"),
            anchor=split_prefixed(state.arrays, "anchor/"),
            tasks=list(state.meta.get("tasks", [])),
        )


def update_importance(
    strategy: Strategy,
    model: SeqModel,
    data: Sequence[LanguageData],
    label: str | None = None,
) -> ImportanceMap:
    """Fold importance measured on ``data``'s training sets into the strategy's map."""
    if not isinstance(strategy, RegularizationStrategy):
        raise StrategyError(f"{strategy.kind or type(strategy).__name__} keeps no importance map")
    key = label or "+".join(task.lang for task in data)
    samples = strategy.select([u for task in data for u in task.train], key)
    new = estimate_importance(
        model.params, samples, strategy.make_objective(model), strategy.reduce
    )
    strategy.importance.blend(new, strategy.alpha, model.params, key)
    logger.info(f"{strategy.kind}: importance updated on {len(samples)} utterances ({key})")
    return strategy.importance


class EWC(RegularizationStrategy):
    kind = "EWC"
    objective = "fisher"
    reduce = "square"

    @property
    def lam(self) -> float:
        return self.config.ewc_lambda

    @property
    def alpha(self) -> float:
        return self.config.ewc_alpha


class MAS(RegularizationStrategy):
    kind = "MAS"
    objective = "mas"
    reduce = "abs"

    @property
    def lam(self) -> float:
        return self.config.mas_lambda

    @property
    def alpha(self) -> float:
        return self.config.mas_alpha

"""Continual-learning strategies, looked up by their short kind name."""

from langcl.core.config import StrategyConfig
from langcl.core.errors import StrategyError
from langcl.strategies.agem import AGEM
from langcl.strategies.architecture import Piggyback, ProgressiveColumns, PromptLearning
from langcl.strategies.base import Strategy, TrainPlan
from langcl.strategies.der import DER
from langcl.strategies.finetune import FineTune
from langcl.strategies.lwf import LwF
from langcl.strategies.regularization import EWC, MAS
from langcl.strategies.replay import ExperienceReplay

REGISTRY: dict[str, type[Strategy]] = {
    cls.kind: cls
    for cls in (
        FineTune,
        ExperienceReplay,
        AGEM,
        DER,
        ProgressiveColumns,
        Piggyback,
        PromptLearning,
        EWC,
        LwF,
        MAS,
    )
}

ARCHITECTURE_KINDS = ("PNN", "PB", "L2P")


def build_strategy(config: StrategyConfig, seed: int = 0) -> Strategy:
    try:
        cls = REGISTRY[config.kind]
    except KeyError:
        raise StrategyError(
            f"unknown strategy '{config.kind}'; choose one of {', '.join(REGISTRY)}"
        ) from None
    return cls(config, seed)


__all__ = ["ARCHITECTURE_KINDS", "REGISTRY", "Strategy", "TrainPlan", "build_strategy"]

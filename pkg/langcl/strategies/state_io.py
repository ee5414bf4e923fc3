"""Persisting strategy state between stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from langcl.core.checkpoint import Checkpoint
from langcl.core.errors import CheckpointError


@dataclass
class StrategyState:
    """JSON-able metadata plus named arrays, written in the checkpoint format."""

    kind: str
    meta: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_state(state: StrategyState, path: Path) -> None:
    checkpoint = Checkpoint(
        arrays=state.arrays, meta={"strategy": state.kind, "state": state.meta}
    )
    checkpoint.save(path)


def load_state(path: Path) -> StrategyState:
    checkpoint = Checkpoint.load(path)
    if "strategy" not in checkpoint.meta:
        raise CheckpointError(f"{path} is not a strategy state archive")
    return StrategyState(
        kind=checkpoint.meta["strategy"],
        meta=checkpoint.meta.get("state", {}),
        arrays=checkpoint.arrays,
    )


def split_prefixed(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {n[len(prefix) :]: a for n, a in arrays.items() if n.startswith(prefix)}

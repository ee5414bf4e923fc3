"""Task-specific adapters used by the architecture-based strategies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from langcl.core import ops
from langcl.core.errors import AdapterError
from langcl.core.params import ParamStore
from langcl.core.tensor import DTYPE, Tensor


def binary_mask(real: np.ndarray, threshold: float) -> np.ndarray:
    return (real > threshold).astype(DTYPE)


@dataclass
class PnnColumn:
    """A gated layer over the frozen base encoder output, plus its own projection."""

    task_id: str

    kind = "pnn"

    @property
    def prefix(self) -> str:
        return f"pnn.{self.task_id}"

    def param_names(self) -> list[str]:
        return [f"{self.prefix}.{p}" for p in ("wa", "ba", "wb", "bb", "w", "b")]

    def to_meta(self) -> dict[str, Any]:
        return {"kind": self.kind, "task_id": self.task_id}


@dataclass
class PromptEntry:
    """A d_model x d_model matrix that post-multiplies the encoder output."""

    task_id: str

    kind = "l2p"

    @property
    def name(self) -> str:
        return f"l2p.{self.task_id}.prompt"

    def param_names(self) -> list[str]:
        return [self.name]

    def to_meta(self) -> dict[str, Any]:
        return {"kind": self.kind, "task_id": self.task_id}


@dataclass
class PiggybackMask:
    """Learned binary masks over selected base weights.

    While the task trains, the mask is thresholded from real-valued weights
    stored in the ParamStore. Once finalised, only the packed bits remain.
    """

    task_id: str
    threshold: float
    targets: tuple[str, ...]
    packed: dict[str, np.ndarray] = field(default_factory=dict)
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    kind = "pb"

    def real_name(self, target: str) -> str:
        return f"pb.{self.task_id}.{target}"

    def bits_name(self, target: str) -> str:
        return f"pbbits.{self.task_id}.{target}"

    def param_names(self) -> list[str]:
        if self.finalized:
            return []
        return [self.real_name(t) for t in self.targets]

    @property
    def finalized(self) -> bool:
        return bool(self.packed)

    def masks(self, params: ParamStore) -> dict[str, Tensor]:
        if self.finalized:
            return {
                target: ops.constant(self.unpack(target)) for target in self.targets
            }
        return {
            target: ops.threshold_mask(params[self.real_name(target)], self.threshold)
            for target in self.targets
        }

    def unpack(self, target: str) -> np.ndarray:
        shape = self.shapes[target]
        size = int(np.prod(shape))
        bits = np.unpackbits(self.packed[target], count=size)
        return bits.reshape(shape).astype(DTYPE)

    def finalize(self, params: ParamStore) -> None:
        """Pack each mask into bits and drop the real-valued weights."""
        for target in self.targets:
            real = params[self.real_name(target)].data
            self.shapes[target] = tuple(real.shape)
            self.packed[target] = np.packbits(real > self.threshold)
            params.remove(self.real_name(target))

    def to_meta(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "task_id": self.task_id,
            "threshold": self.threshold,
            "targets": list(self.targets),
            "shapes": {k: list(v) for k, v in self.shapes.items()},
        }


Adapter = PnnColumn | PromptEntry | PiggybackMask


def adapter_from_meta(meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> Adapter:
    kind = meta.get("kind")
    task_id = str(meta.get("task_id"))
    if kind == "pnn":
        return PnnColumn(task_id)
    if kind == "l2p":
        return PromptEntry(task_id)
    if kind == "pb":
        mask = PiggybackMask(task_id, float(meta["threshold"]), tuple(meta["targets"]))
        for target, shape in meta.get("shapes", {}).items():
            mask.shapes[target] = tuple(shape)
            mask.packed[target] = arrays[mask.bits_name(target)]
        return mask
    raise AdapterError(f"unknown adapter kind '{kind}' for task '{task_id}'")

"""The transcription model: a causal gated encoder and token heads.

Two token-space regimes are supported:

``shared``
    One head spans the union vocabulary. Each language owns an embedding row
    (``lang.<id>``) that is added to the encoder output, the analog of forcing
    a language token at decoding time.

``per-language``
    Each language has its own head over blank plus its own tokens; ids are
    mapped between the global and head-local spaces.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from langcl.core import ops
from langcl.core.adapters import (
    Adapter,
    PiggybackMask,
    PnnColumn,
    PromptEntry,
    adapter_from_meta,
)
from langcl.core.checkpoint import Checkpoint, restore
from langcl.core.ctc import BLANK, TokenSeq, greedy_decode
from langcl.core.errors import AdapterError, CheckpointError, ShapeError, VocabularyError
from langcl.core.params import ParamStore
from langcl.core.seeds import stream
from langcl.core.tensor import Tensor

logger = logging.getLogger(__name__)

SHARED = "shared"
PER_LANGUAGE = "per-language"


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    context: int = 3
    regime: str = SHARED
    init_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in ("d_in", "vocab_size", "d_model", "n_layers", "context"):
            if getattr(self, name) < 1:
                raise ShapeError(f"EncoderConfig.{name} must be positive")
        if self.regime not in (SHARED, PER_LANGUAGE):
            raise ShapeError(f"unknown token regime '{self.regime}'")


@dataclass(frozen=True)
class TaskHead:
    """Projection d_model -> |V_task|; ``token_ids[k]`` is the global id of local k."""

    task_id: str
    token_ids: tuple[int, ...]
    weight: str
    bias: str
    lang_row: str | None = None

    @property
    def size(self) -> int:
        return len(self.token_ids)

    def to_local(self, tokens: Sequence[int]) -> list[int]:
        index = {g: k for k, g in enumerate(self.token_ids)}
        try:
            return [index[t] for t in tokens]
        except KeyError as e:
            raise VocabularyError(
                f"token {e.args[0]} is not in the vocabulary of head '{self.task_id}'"
            ) from None

    def to_global(self, tokens: Sequence[int]) -> tuple[int, ...]:
        return tuple(self.token_ids[t] for t in tokens)


@dataclass
class ModelOutput:
    hidden: Tensor
    logits: Tensor
    head: TaskHead


class SeqModel:
    def __init__(self, config: EncoderConfig, seed: int = 0) -> None:
        self.config = config
        self.seed = seed
        self.params = ParamStore()
        self.heads: dict[str, TaskHead] = {}
        self.lang_rows: dict[str, str] = {}
        self.adapters: dict[str, Adapter] = {}

        d_prev = config.d_in
        for layer in range(config.n_layers):
            self._init_gated(f"enc.{layer}", config.context * d_prev, config.d_model)
            d_prev = config.d_model
        if config.regime == SHARED:
            self.heads[SHARED] = self._init_head(SHARED, tuple(range(config.vocab_size)))

    def _normal(self, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        rng = stream(self.seed, name)
        return rng.standard_normal(shape) * (self.config.init_scale / np.sqrt(fan_in))

    def _init_gated(self, prefix: str, fan_in: int, width: int) -> None:
        self.params.add(f"{prefix}.wa", self._normal(f"{prefix}.wa", (fan_in, width), fan_in))
        self.params.add(f"{prefix}.ba", np.zeros(width))
        self.params.add(f"{prefix}.wb", self._normal(f"{prefix}.wb", (fan_in, width), fan_in))
        self.params.add(f"{prefix}.bb", np.zeros(width))

    def _init_head(self, task_id: str, token_ids: tuple[int, ...], prefix: str = "head") -> TaskHead:
        d = self.config.d_model
        weight, bias = f"{prefix}.{task_id}.w", f"{prefix}.{task_id}.b"
        self.params.add(weight, self._normal(weight, (d, len(token_ids)), d))
        self.params.add(bias, np.zeros(len(token_ids)))
        return TaskHead(task_id, token_ids, weight, bias)

    @property
    def regime(self) -> str:
        return self.config.regime

    @property
    def vocab_size(self) -> int:
        """Rows of the output space: token rows plus language-token rows."""
        if self.regime == SHARED:
            return self.heads[SHARED].size + len(self.lang_rows)
        return sum(h.size for h in self.heads.values())

    def add_language_token(self, head: TaskHead, task_id: str) -> None:
        """Give ``task_id`` its own embedding row and make the embedding layer trainable."""
        if self.regime != SHARED:
            raise VocabularyError("language tokens exist only in the shared regime")
        if task_id in self.lang_rows:
            raise VocabularyError(f"language token for '{task_id}' already registered")
        name = f"lang.{task_id}"
        self.params.add(name, self._normal(name, (self.config.d_model,), self.config.d_model))
        self.lang_rows[task_id] = name
        self.params.set_frozen([head.weight, head.bias, *self.lang_rows.values()], False)

    def add_head(self, task_id: str, token_ids: Sequence[int]) -> TaskHead:
        if self.regime != PER_LANGUAGE:
            raise VocabularyError("per-language heads need the per-language regime")
        if task_id in self.heads:
            raise VocabularyError(f"head for '{task_id}' already exists")
        ids = (BLANK, *sorted(set(token_ids) - {BLANK}))
        head = self._init_head(task_id, ids)
        self.heads[task_id] = head
        return head

    def register_language(self, task_id: str, token_ids: Sequence[int]) -> None:
        """Make ``task_id`` decodable: a language row or a head, whichever the regime uses."""
        if self.regime == SHARED:
            if task_id not in self.lang_rows:
                self.add_language_token(self.heads[SHARED], task_id)
        elif task_id not in self.heads:
            self.add_head(task_id, token_ids)

    def knows(self, task_id: str) -> bool:
        if self.regime == SHARED:
            return task_id in self.lang_rows
        return task_id in self.heads

    def head_for(self, task_id: str | None) -> TaskHead:
        if self.regime == SHARED:
            base = self.heads[SHARED]
            row = self.lang_rows.get(task_id) if task_id is not None else None
            return TaskHead(base.task_id, base.token_ids, base.weight, base.bias, row)
        if task_id not in self.heads:
            raise VocabularyError(f"no head for task '{task_id}'")
        return self.heads[task_id]

    # adapters

    def add_adapter(self, adapter: Adapter, pb_init: float = 0.01, noise: float = 0.01) -> None:
        task_id = adapter.task_id
        if task_id in self.adapters:
            raise AdapterError(f"adapter for task '{task_id}' already registered")
        d = self.config.d_model
        if isinstance(adapter, PnnColumn):
            self._init_gated(adapter.prefix, self.config.context * d, d)
            width = self.head_for(task_id).size
            self.params.add(f"{adapter.prefix}.w", self._normal(f"{adapter.prefix}.w", (d, width), d))
            self.params.add(f"{adapter.prefix}.b", np.zeros(width))
        elif isinstance(adapter, PromptEntry):
            rng = stream(self.seed, adapter.name)
            self.params.add(adapter.name, np.eye(d) + noise * rng.standard_normal((d, d)))
        elif isinstance(adapter, PiggybackMask):
            for target in adapter.targets:
                shape = self.params[target].shape
                self.params.add(adapter.real_name(target), np.full(shape, pb_init))
        self.adapters[task_id] = adapter
        logger.debug(f"registered {adapter.kind} adapter for '{task_id}'")

    def piggyback_targets(self, task_id: str) -> tuple[str, ...]:
        """Last encoder layer weights, plus the shared head when the task uses it."""
        last = f"enc.{self.config.n_layers - 1}"
        targets = [f"{last}.wa", f"{last}.wb"]
        if self.regime == SHARED:
            targets.append(self.heads[SHARED].weight)
        return tuple(targets)

    # forward pass

    def _gated(self, x: Tensor, prefix: str, masks: dict[str, Tensor]) -> Tensor:
        window = ops.concat([ops.shift_time(x, k) for k in range(self.config.context)])

        def weight(name: str) -> Tensor:
            w = self.params[name]
            return ops.mul(w, masks[name]) if name in masks else w

        gate_a = ops.add(ops.matmul(window, weight(f"{prefix}.wa")), self.params[f"{prefix}.ba"])
        gate_b = ops.add(ops.matmul(window, weight(f"{prefix}.wb")), self.params[f"{prefix}.bb"])
        return ops.mul(ops.tanh(gate_a), ops.sigmoid(gate_b))

    def _masks(self, adapter: Adapter | None) -> dict[str, Tensor]:
        if isinstance(adapter, PiggybackMask):
            return adapter.masks(self.params)
        return {}

    def encode(self, features: np.ndarray | Tensor, adapter: str | None = None) -> Tensor:
        """(time, d_in) or (batch, time, d_in) features to hidden states."""
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.data.ndim not in (2, 3) or x.shape[-1] != self.config.d_in:
            raise ShapeError(f"encode: expected (..., time, {self.config.d_in}), got {x.shape}")
        if x.shape[-2] < 1:
            raise ShapeError("encode: zero-length time dimension")
        entry = None
        if adapter is not None:
            if adapter not in self.adapters:
                raise AdapterError(f"no adapter registered for task '{adapter}'")
            entry = self.adapters[adapter]
        return self._encode(x, entry)

    def _encode(self, x: Tensor, adapter: Adapter | None) -> Tensor:
        masks = self._masks(adapter)
        h = x
        for layer in range(self.config.n_layers):
            h = self._gated(h, f"enc.{layer}", masks)
        if isinstance(adapter, PromptEntry):
            h = ops.matmul(h, self.params[adapter.name])
        elif isinstance(adapter, PnnColumn):
            h = self._gated(h, adapter.prefix, {})
        return h

    def logits(self, hidden: Tensor, head: TaskHead, masks: dict[str, Tensor] | None = None) -> Tensor:
        weight = self.params[head.weight]
        if weight.shape[-1] != head.size:
            raise VocabularyError(
                f"head '{head.task_id}' has {weight.shape[-1]} outputs for {head.size} tokens"
            )
        if masks and head.weight in masks:
            weight = ops.mul(weight, masks[head.weight])
        if head.lang_row is not None:
            hidden = ops.add(hidden, self.params[head.lang_row])
        return ops.add(ops.matmul(hidden, weight), self.params[head.bias])

    def forward(self, features: np.ndarray | Tensor, task_id: str | None) -> ModelOutput:
        """Encode and project for ``task_id``, routing through its adapter if any."""
        if task_id is not None and not self.knows(task_id):
            raise VocabularyError(f"no language registered for task '{task_id}'")
        adapter = self.adapters.get(task_id) if task_id is not None else None
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.shape[-2] < 1:
            raise ShapeError("forward: zero-length time dimension")
        hidden = self._encode(x, adapter)
        head = self.head_for(task_id)
        if isinstance(adapter, PnnColumn):
            column = TaskHead(
                head.task_id, head.token_ids, f"{adapter.prefix}.w", f"{adapter.prefix}.b"
            )
            return ModelOutput(hidden, self.logits(hidden, column), column)
        return ModelOutput(hidden, self.logits(hidden, head, self._masks(adapter)), head)

    def transcribe(self, features: np.ndarray, task_id: str | None) -> TokenSeq:
        """Greedy transcript in global token ids."""
        out = self.forward(features, task_id)
        local = greedy_decode(out.logits.data, task_id or "")
        return TokenSeq(out.head.to_global(local.tokens), task_id or "")

    # persistence

    def snapshot(self) -> Checkpoint:
        arrays = self.params.values()
        for adapter in self.adapters.values():
            if isinstance(adapter, PiggybackMask):
                for target, bits in adapter.packed.items():
                    arrays[adapter.bits_name(target)] = bits.copy()
        meta: dict[str, Any] = {
            "config": asdict(self.config),
            "seed": self.seed,
            "heads": [
                {"task_id": h.task_id, "token_ids": list(h.token_ids), "weight": h.weight, "bias": h.bias}
                for h in self.heads.values()
            ],
            "lang_rows": dict(self.lang_rows),
            "adapters": [a.to_meta() for a in self.adapters.values()],
        }
        return Checkpoint(arrays=arrays, frozen=self.params.frozen, meta=meta)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> SeqModel:
        meta = checkpoint.meta
        try:
            config = EncoderConfig(**meta["config"])
            model = cls.__new__(cls)
            model.config = config
            model.seed = int(meta["seed"])
            model.params = restore(checkpoint)
            model.heads = {
                h["task_id"]: TaskHead(h["task_id"], tuple(h["token_ids"]), h["weight"], h["bias"])
                for h in meta["heads"]
            }
            model.lang_rows = dict(meta["lang_rows"])
            model.adapters = {}
            for entry in meta["adapters"]:
                adapter = adapter_from_meta(entry, checkpoint.arrays)
                model.adapters[adapter.task_id] = adapter
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"checkpoint metadata is incomplete: {e}") from e
        return model

    def save(self, path: Path) -> None:
        self.snapshot().save(path)

    @classmethod
    def load(cls, path: Path) -> SeqModel:
        return cls.from_checkpoint(Checkpoint.load(path))

    def load_checkpoint(self, checkpoint: Checkpoint) -> None:
        """Restore values in place; the checkpoint must come from the same architecture."""
        if checkpoint.meta.get("config") != asdict(self.config):
            raise CheckpointError("checkpoint was written for a different model configuration")
        floats = {n: a for n, a in checkpoint.arrays.items() if a.dtype != np.uint8}
        if set(floats) != set(self.params):
            extra = sorted(set(floats) ^ set(self.params))
            raise CheckpointError(f"parameter sets differ at entry '{extra[0]}'")
        restore(checkpoint, self.params)

    def copy(self) -> SeqModel:
        return SeqModel.from_checkpoint(self.snapshot())

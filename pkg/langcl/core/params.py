"""Named parameter collections."""

from __future__ import annotations

from collections.abc import Iterable, Iterator

import numpy as np

from langcl.core.errors import CheckpointError, ShapeError
from langcl.core.tensor import DTYPE, Tensor


class ParamStore:
    """Ordered map of parameter name to tensor, with a frozen flag per entry.

    Frozen entries keep ``requires_grad`` off, so the tape never produces a
    gradient for them and the optimizer skips them.
    """

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray, frozen: bool = False) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter '{name}' already exists")
        tensor = Tensor(np.array(value, dtype=DTYPE), requires_grad=not frozen, name=name)
        self._tensors[name] = tensor
        if frozen:
            self._frozen.add(name)
        return tensor

    def remove(self, name: str) -> None:
        del self._tensors[name]
        self._frozen.discard(name)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"unknown parameter '{name}'") from None

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._tensors if n.startswith(prefix)]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def trainable(self) -> list[str]:
        return [n for n in self._tensors if n not in self._frozen]

    def set_frozen(self, names: Iterable[str], frozen: bool = True) -> None:
        for name in names:
            tensor = self[name]
            tensor.requires_grad = not frozen
            if frozen:
                self._frozen.add(name)
                tensor.zero_grad()
            else:
                self._frozen.discard(name)

    def freeze_all(self) -> None:
        self.set_frozen(list(self._tensors))

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def grad_of(self, name: str) -> np.ndarray:
        tensor = self[name]
        return tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)

    def flat_grad(self, names: list[str]) -> np.ndarray:
        if not names:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([self.grad_of(n).ravel() for n in names])

    def set_flat_grad(self, names: list[str], flat: np.ndarray) -> None:
        offset = 0
        for name in names:
            tensor = self[name]
            size = tensor.size
            tensor.grad = flat[offset : offset + size].reshape(tensor.shape).copy()
            offset += size
        if offset != flat.size:
            raise ShapeError(
                f"set_flat_grad: vector of length {flat.size} does not fit {offset} values"
            )

    def values(self) -> dict[str, np.ndarray]:
        """Copies of every parameter value, keyed by name."""
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            if name not in self._tensors:
                raise CheckpointError(f"entry '{name}' has no matching parameter")
            tensor = self._tensors[name]
            if tensor.shape != value.shape:
                raise CheckpointError(
                    f"entry '{name}' has shape {value.shape}, parameter has {tensor.shape}"
                )
            tensor.data = np.array(value, dtype=DTYPE, copy=True)

    @property
    def frozen(self) -> set[str]:
        return set(self._frozen)

    def num_values(self, names: Iterable[str] | None = None) -> int:
        selected = self._tensors if names is None else names
        return sum(self._tensors[n].size for n in selected)

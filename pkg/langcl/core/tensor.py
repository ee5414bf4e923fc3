"""Dense tensors and the tape that records them for reverse-mode differentiation.

Operations in :mod:`langcl.core.ops` record themselves on the active tape
whenever one of their inputs requires a gradient. ``Tape.backward`` then walks
the recorded nodes once, newest first, and accumulates gradients into the
``grad`` slot of every leaf tensor that asked for one.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any

import numpy as np

from langcl.core.errors import GradientError, ShapeError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_active_tape: ContextVar[Tape | None] = ContextVar("langcl_tape", default=None)


class Tensor:
    """A real-valued array with an optional gradient slot."""

    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient of shape {grad.shape} does not match tensor {self.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor | float) -> Tensor:
        from langcl.core import ops

        return ops.add(self, as_tensor(other))

    def __radd__(self, other: float) -> Tensor:
        return self.__add__(other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        from langcl.core import ops

        return ops.sub(self, as_tensor(other))

    def __mul__(self, other: Tensor | float) -> Tensor:
        from langcl.core import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other: float) -> Tensor:
        return self.__mul__(other)

    def __neg__(self) -> Tensor:
        from langcl.core import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from langcl.core import ops

        return ops.matmul(self, other)


def as_tensor(value: Tensor | Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager to make it the active tape::

        with Tape() as tape:
            loss = ops.sum_(ops.square(x))
        tape.backward(loss)
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._produced: set[int] = set()
        self._token: Any = None

    def __enter__(self) -> Tape:
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward: BackwardFn,
    ) -> None:
        self.nodes.append(Node(op, inputs, output, backward))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise GradientError(
                f"backward needs a scalar loss, got shape {loss.shape}"
            )
        if id(loss) not in self._produced:
            if loss.requires_grad:
                loss.accumulate(np.ones_like(loss.data))
                return
            raise GradientError("loss was not produced by an operation on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(upstream), strict=True):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in self._produced:
                    if key in pending:
                        pending[key] = pending[key] + grad
                    else:
                        pending[key] = grad
                else:
                    tensor.accumulate(grad)


def active_tape() -> Tape | None:
    return _active_tape.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, e.g. for evaluation passes."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)

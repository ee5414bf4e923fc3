"""Connectionist temporal classification: loss and greedy decoding.

The loss runs the forward-backward recursions in log space over the target
extended with blanks. Gradients are taken with respect to the per-frame
log-probabilities, so they compose with ``log_softmax`` on the tape.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from langcl.core.errors import CTCError, ShapeError
from langcl.core.ops import emit
from langcl.core.tensor import Tensor

BLANK = 0
NEG_INF = -np.inf


@dataclass(frozen=True)
class TokenSeq:
    """A transcript as token ids (no blanks) for one language."""

    tokens: tuple[int, ...]
    lang: str = ""

    def __post_init__(self) -> None:
        if BLANK in self.tokens:
            raise ShapeError(f"transcript for '{self.lang}' contains the blank token")

    def __len__(self) -> int:
        return len(self.tokens)


def min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per token plus one per repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:], strict=False) if a == b)
    return len(target) + repeats


def check_feasible(frames: int, target: Sequence[int]) -> None:
    needed = min_frames(target)
    if frames < needed:
        raise CTCError(
            f"target of length {len(target)} needs at least {needed} frames, got {frames}"
        )


def _extend(target: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(ext.size, dtype=bool)
    if ext.size > 2:
        skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return ext, skip


def _logsumexp3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.logaddexp(np.logaddexp(a, b), c)


def _shift(values: np.ndarray, by: int) -> np.ndarray:
    out = np.full_like(values, NEG_INF)
    if by > 0:
        out[by:] = values[:-by]
    else:
        out[:by] = values[-by:]
    return out


def ctc_forward_backward(log_probs: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and its gradient for one utterance."""
    frames, vocab = log_probs.shape
    if frames < 1:
        raise ShapeError("ctc_loss: zero-length input")
    if any(not 0 < t < vocab for t in target):
        raise CTCError(f"ctc_loss: target ids out of range for vocabulary of {vocab}")
    check_feasible(frames, target)

    ext, skip = _extend(target)
    states = ext.size
    emitted = log_probs[:, ext]

    alpha = np.full((frames, states), NEG_INF)
    alpha[0, 0] = emitted[0, 0]
    if states > 1:
        alpha[0, 1] = emitted[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        jump = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = _logsumexp3(prev, _shift(prev, 1), jump) + emitted[t]

    # beta excludes the emission at its own frame
    beta = np.full((frames, states), NEG_INF)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    skip_from = np.zeros(states, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + emitted[t + 1]
        jump = np.where(skip_from, _shift(nxt, -2), NEG_INF)
        beta[t] = _logsumexp3(nxt, _shift(nxt, -1), jump)

    tail = alpha[-1, -1] if states == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    log_likelihood = float(tail)

    with np.errstate(invalid="ignore"):
        occupancy = np.exp(alpha + beta - log_likelihood)
    occupancy = np.nan_to_num(occupancy, nan=0.0)
    grad = np.zeros_like(log_probs)
    for s in range(states):
        grad[:, ext[s]] -= occupancy[:, s]
    return -log_likelihood, grad


def ctc_loss(log_probs: Tensor, target: TokenSeq | Sequence[int]) -> Tensor:
    """CTC negative log-likelihood of ``target`` under (time x vocab) log-probs."""
    tokens = target.tokens if isinstance(target, TokenSeq) else tuple(target)
    if log_probs.data.ndim != 2:
        raise ShapeError(f"ctc_loss: expected (time, vocab), got {log_probs.shape}")
    loss, grad = ctc_forward_backward(log_probs.data, tokens)
    return emit("ctc_loss", (log_probs,), np.asarray(loss), lambda g: (g * grad,))


def ctc_loss_batch(
    log_probs: Tensor,
    targets: Sequence[Sequence[int]],
    lengths: Sequence[int],
) -> Tensor:
    """Mean CTC loss over a padded (batch, time, vocab) tensor."""
    if log_probs.data.ndim != 3 or len(targets) != log_probs.shape[0]:
        raise ShapeError(
            f"ctc_loss_batch: {log_probs.shape} does not match {len(targets)} targets"
        )
    batch = log_probs.shape[0]
    total = 0.0
    grad = np.zeros_like(log_probs.data)
    for b, (target, length) in enumerate(zip(targets, lengths, strict=True)):
        loss, g = ctc_forward_backward(log_probs.data[b, :length], tuple(target))
        total += loss
        grad[b, :length] = g
    grad /= batch
    return emit(
        "ctc_loss", (log_probs,), np.asarray(total / batch), lambda g: (g * grad,)
    )


def greedy_decode(log_probs: np.ndarray | Tensor, lang: str = "") -> TokenSeq:
    """Best path: per-frame argmax, merge repeats, drop blanks."""
    values = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ShapeError(f"greedy_decode: expected (time>=1, vocab), got {values.shape}")
    best = values.argmax(axis=-1)
    tokens: list[int] = []
    previous = -1
    for token in best.tolist():
        if token != previous and token != BLANK:
            tokens.append(token)
        previous = token
    return TokenSeq(tuple(tokens), lang)

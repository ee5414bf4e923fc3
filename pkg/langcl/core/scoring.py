"""Levenshtein alignment and word/character error rates over token ids."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Literal

from langcl.core.ctc import TokenSeq
from langcl.core.errors import ScoringError

Granularity = Literal["word", "char"]


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


@dataclass(frozen=True)
class WerScore:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    def __post_init__(self) -> None:
        if self.ref_len <= 0:
            raise ScoringError("reference length must be positive")

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        # Not clamped: many insertions push the rate above 1.
        return self.errors / self.ref_len


def edit_distance(ref: Sequence[object], hyp: Sequence[object]) -> EditCounts:
    """Minimal unit-cost alignment counts.

    Among equal-cost alignments the backtrace prefers a match or substitution,
    then a deletion, then an insertion.
    """
    rows, cols = len(ref) + 1, len(hyp) + 1
    cost = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        cost[i][0] = i
    for j in range(cols):
        cost[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            diagonal = cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i][j] = min(diagonal, cost[i - 1][j] + 1, cost[i][j - 1] + 1)

    subs = ins = dels = 0
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            mismatch = ref[i - 1] != hyp[j - 1]
            if cost[i][j] == cost[i - 1][j - 1] + mismatch:
                subs += mismatch
                i, j = i - 1, j - 1
                continue
        if i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(subs, ins, dels)


def split_words(tokens: Sequence[int], boundary: int) -> list[tuple[int, ...]]:
    words: list[tuple[int, ...]] = []
    current: list[int] = []
    for token in tokens:
        if token == boundary:
            if current:
                words.append(tuple(current))
            current = []
        else:
            current.append(token)
    if current:
        words.append(tuple(current))
    return words


def score(
    ref: TokenSeq,
    hyp: TokenSeq,
    granularity: Granularity = "word",
    boundary: int | None = None,
) -> WerScore:
    """Score one hypothesis.

    Words are the runs between ``boundary`` tokens. A language without a
    boundary token is always scored per character (token).
    """
    if granularity not in ("word", "char"):
        raise ScoringError(f"unknown granularity '{granularity}'")
    if granularity == "word" and boundary is not None:
        ref_units: Sequence[object] = split_words(ref.tokens, boundary)
        hyp_units: Sequence[object] = split_words(hyp.tokens, boundary)
    else:
        ref_units, hyp_units = ref.tokens, hyp.tokens
    if not ref_units:
        raise ScoringError(f"empty reference for language '{ref.lang}'")
    counts = edit_distance(ref_units, hyp_units)
    return WerScore(counts.substitutions, counts.insertions, counts.deletions, len(ref_units))


def aggregate(scores: Iterable[WerScore]) -> WerScore:
    """Corpus-level score: summed errors over summed reference lengths."""
    items = list(scores)
    if not items:
        raise ScoringError("cannot aggregate an empty list of scores")
    return WerScore(
        sum(s.substitutions for s in items),
        sum(s.insertions for s in items),
        sum(s.deletions for s in items),
        sum(s.ref_len for s in items),
    )

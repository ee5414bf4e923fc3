"""The WER matrix and the four continual-learning metrics computed from it.

Stage ``t`` and task ``i`` are 1-based. Task 1 is the joint base task; tasks
2..T are the new languages in the order they were learned. Values are stored
as fractions and never clamped.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from langcl.core.errors import MetricError

METRICS = ("awer", "bwt", "im", "fwt")


class WerMatrix:
    """Lower-triangular WER_{t,i}: error on task i after learning task t."""

    def __init__(self, tasks: Sequence[str]) -> None:
        if not tasks:
            raise MetricError("a WER matrix needs at least one task")
        self.tasks = list(tasks)
        self.values = np.full((len(tasks), len(tasks)), np.nan)

    @property
    def size(self) -> int:
        return len(self.tasks)

    def _check(self, t: int, i: int) -> None:
        if not 1 <= t <= self.size:
            raise MetricError(f"stage {t} outside 1..{self.size}")
        if not 1 <= i <= t:
            raise MetricError(f"WER_{{{t},{i}}} is above the diagonal")

    def set(self, t: int, i: int, wer: float) -> None:
        self._check(t, i)
        if not wer >= 0.0:
            raise MetricError(f"WER_{{{t},{i}}} = {wer} is not a non-negative number")
        self.values[t - 1, i - 1] = wer

    def get(self, t: int, i: int) -> float:
        self._check(t, i)
        value = float(self.values[t - 1, i - 1])
        if math.isnan(value):
            raise MetricError(f"WER_{{{t},{i}}} is undefined")
        return value

    def is_set(self, t: int, i: int) -> bool:
        return 1 <= i <= t <= self.size and not math.isnan(self.values[t - 1, i - 1])

    def row(self, t: int) -> list[float]:
        return [self.get(t, i) for i in range(1, t + 1)]

    def set_row(self, t: int, wers: Sequence[float]) -> None:
        if len(wers) != t:
            raise MetricError(f"row {t} needs {t} values, got {len(wers)}")
        for i, wer in enumerate(wers, 1):
            self.set(t, i, wer)

    @property
    def completed(self) -> int:
        """Number of leading stages whose rows are fully defined."""
        count = 0
        for t in range(1, self.size + 1):
            if not all(self.is_set(t, i) for i in range(1, t + 1)):
                break
            count = t
        return count

    def entries(self) -> Iterable[tuple[int, int, str, float]]:
        for t in range(1, self.size + 1):
            for i in range(1, t + 1):
                if self.is_set(t, i):
                    yield t, i, self.tasks[i - 1], float(self.values[t - 1, i - 1])

    def to_dict(self) -> dict[str, Any]:
        rows = [
            [float(self.values[t - 1, i - 1]) if self.is_set(t, i) else None for i in range(1, t + 1)]
            for t in range(1, self.size + 1)
        ]
        return {"tasks": list(self.tasks), "rows": rows}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> WerMatrix:
        try:
            matrix = cls(raw["tasks"])
            for t, row in enumerate(raw["rows"], 1):
                for i, value in enumerate(row, 1):
                    if value is not None:
                        matrix.set(t, i, float(value))
        except (KeyError, TypeError) as e:
            raise MetricError(f"malformed WER matrix: {e}") from e
        return matrix

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WerMatrix):
            return NotImplemented
        return self.tasks == other.tasks and np.array_equal(
            self.values, other.values, equal_nan=True
        )


@dataclass
class ReferenceWers:
    """Reference error per task: joint training on everything, and solo fine-tuning."""

    joint: dict[int, float] = field(default_factory=dict)
    solo: dict[int, float] = field(default_factory=dict)

    def joint_wer(self, t: int) -> float:
        if t not in self.joint:
            raise MetricError(f"no joint reference for task {t}")
        return self.joint[t]

    def solo_wer(self, t: int) -> float:
        if t not in self.solo:
            raise MetricError(f"no solo fine-tuning reference for task {t}")
        return self.solo[t]

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            "joint": {str(t): v for t, v in sorted(self.joint.items())},
            "solo": {str(t): v for t, v in sorted(self.solo.items())},
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Mapping[str, float]]) -> ReferenceWers:
        return cls(
            joint={int(t): float(v) for t, v in raw.get("joint", {}).items()},
            solo={int(t): float(v) for t, v in raw.get("solo", {}).items()},
        )


def awer(m: WerMatrix, t: int) -> float:
    """Mean error over the t tasks seen after stage t."""
    return float(np.mean(m.row(t)))


def bwt(m: WerMatrix, t: int) -> float:
    """Mean change in error on earlier tasks; negative means forgetting."""
    if t < 2:
        raise MetricError(f"backward transfer needs t >= 2, got {t}")
    return float(np.mean([m.get(i, i) - m.get(t, i) for i in range(1, t)]))


def im(m: WerMatrix, refs: ReferenceWers, t: int) -> float:
    if t < 2:
        raise MetricError(f"intransigence needs t >= 2, got {t}")
    return m.get(t, t) - refs.joint_wer(t)


def fwt(m: WerMatrix, refs: ReferenceWers, t: int) -> float:
    if t < 2:
        raise MetricError(f"forward transfer needs t >= 2, got {t}")
    return refs.solo_wer(t) - m.get(t, t)


def metric_series(
    m: WerMatrix, refs: ReferenceWers | None = None
) -> dict[str, dict[int, float]]:
    """Every metric at every completed stage where it is defined.

    IM and FWT are left out when no references are given.
    """
    series: dict[str, dict[int, float]] = {name: {} for name in METRICS}
    for t in range(1, m.completed + 1):
        series["awer"][t] = awer(m, t)
        if t < 2:
            continue
        series["bwt"][t] = bwt(m, t)
        if refs is not None:
            series["im"][t] = im(m, refs, t)
            series["fwt"][t] = fwt(m, refs, t)
    return series


def column_average(values: Iterable[float | None]) -> float:
    """Mean of the defined entries of one table column."""
    defined = [v for v in values if v is not None and not math.isnan(v)]
    if not defined:
        raise MetricError("column has no defined entries")
    return float(np.mean(defined))


def average_rows(table: Mapping[str, Sequence[float | None]]) -> list[float]:
    """Column means of a per-language table (rows keyed by language).

    Undefined entries, such as the base row of BWT, IM and FWT tables, are
    skipped, so those averages run over the new languages only.
    """
    rows = list(table.values())
    if not rows:
        raise MetricError("table has no rows")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise MetricError("table rows differ in length")
    return [column_average(row[j] for row in rows) for j in range(width)]

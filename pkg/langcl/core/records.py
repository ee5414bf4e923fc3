"""Experiment records and the files written for them.

An experiment directory holds::

    record.json       everything, WERs as fractions (format_version 1)
    wer_matrix.csv    t,i,task,wer   (wer in percent)
    metrics.csv       stage,metric,value   (percent)
    plot/<metric>.csv stage,metric,value,std
    report.md         YAML frontmatter summary plus markdown tables
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import frontmatter
import yaml

from langcl.core.checkpoint import atomic_write_text
from langcl.core.errors import MetricError
from langcl.core.metrics import METRICS, ReferenceWers, WerMatrix, metric_series

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TOLERANCE = 1e-9

Series = dict[str, dict[int, float]]


@dataclass
class ExperimentRecord:
    config_hash: str
    reference_hash: str
    strategy: str
    regime: str
    seed: int
    order: list[str]
    matrix: WerMatrix
    references: ReferenceWers | None = None
    metrics: Series = field(default_factory=dict)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    reference_budget: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def stages(self) -> int:
        return self.matrix.completed

    def final(self, metric: str) -> float | None:
        values = self.metrics.get(metric, {})
        return values[max(values)] if values else None

    def refresh_metrics(self) -> Series:
        self.metrics = metric_series(self.matrix, self.references)
        return self.metrics

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "config_hash": self.config_hash,
            "reference_hash": self.reference_hash,
            "strategy": self.strategy,
            "regime": self.regime,
            "seed": self.seed,
            "order": list(self.order),
            "wer_matrix": self.matrix.to_dict(),
            "references": self.references.to_dict() if self.references else None,
            "metrics": {m: {str(t): v for t, v in s.items()} for m, s in self.metrics.items()},
            "stage_seconds": dict(self.stage_seconds),
            "warnings": list(self.warnings),
            "reference_budget": dict(self.reference_budget),
            "config": self.config,
            "created": self.created,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> ExperimentRecord:
        version = raw.get("format_version")
        if version != FORMAT_VERSION:
            raise MetricError(f"unsupported record format_version {version!r}")
        refs = raw.get("references")
        return cls(
            config_hash=raw["config_hash"],
            reference_hash=raw["reference_hash"],
            strategy=raw["strategy"],
            regime=raw["regime"],
            seed=int(raw["seed"]),
            order=list(raw["order"]),
            matrix=WerMatrix.from_dict(raw["wer_matrix"]),
            references=ReferenceWers.from_dict(refs) if refs else None,
            metrics={
                m: {int(t): float(v) for t, v in s.items()}
                for m, s in raw.get("metrics", {}).items()
            },
            stage_seconds={k: float(v) for k, v in raw.get("stage_seconds", {}).items()},
            warnings=list(raw.get("warnings", [])),
            reference_budget=dict(raw.get("reference_budget", {})),
            config=dict(raw.get("config", {})),
            created=str(raw.get("created", "")),
        )


def _percent(value: float) -> float:
    return 100.0 * value


def _csv_text(fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in fieldnames})
    return buffer.getvalue()


def _metric_rows(series: Series) -> list[dict[str, Any]]:
    return [
        {"stage": t, "metric": metric, "value": repr(_percent(value))}
        for metric in METRICS
        for t, value in sorted(series.get(metric, {}).items())
    ]


def write_record(record: ExperimentRecord, out: Path) -> list[Path]:
    """Write every artifact of ``record`` into ``out``; each file lands atomically."""
    out = Path(out)
    written = []

    def put(name: str, text: str) -> None:
        target = out / name
        atomic_write_text(target, text)
        written.append(target)

    put("record.json", json.dumps(record.to_dict(), indent=2) + "\n")
    put(
        "wer_matrix.csv",
        _csv_text(
            ("t", "i", "task", "wer"),
            (
                {"t": t, "i": i, "task": task, "wer": repr(_percent(wer))}
                for t, i, task, wer in record.matrix.entries()
            ),
        ),
    )
    put("metrics.csv", _csv_text(("stage", "metric", "value"), _metric_rows(record.metrics)))
    written.extend(emit_plot_data(record.metrics, out / "plot"))
    put("report.md", render_report(record))
    logger.info(f"wrote {len(written)} files to {out}")
    return written


def read_record(path: Path) -> ExperimentRecord:
    """Load ``record.json`` from a file or an experiment directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise MetricError(f"cannot read record {path}: {e}") from e
    try:
        return ExperimentRecord.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise MetricError(f"malformed record {path}: {e}") from e


def read_metrics_csv(path: Path) -> Series:
    series: Series = {}
    with Path(path).open(encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            series.setdefault(row["metric"], {})[int(row["stage"])] = float(row["value"]) / 100.0
    return series


def read_wer_csv(path: Path) -> WerMatrix:
    """Rebuild a WER matrix from a ``wer_matrix.csv``; task names come from column i."""
    entries = []
    names: dict[int, str] = {}
    try:
        with Path(path).open(encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                t, i = int(row["t"]), int(row["i"])
                if names.setdefault(i, row["task"]) != row["task"]:
                    raise MetricError(f"{path}: task {i} named both {names[i]!r} and {row['task']!r}")
                entries.append((t, i, float(row["wer"]) / 100.0))
    except (OSError, KeyError, ValueError) as e:
        raise MetricError(f"cannot read WER matrix {path}: {e}") from e
    if not names or sorted(names) != list(range(1, max(names) + 1)):
        raise MetricError(f"{path}: tasks must be numbered 1..T without gaps")
    matrix = WerMatrix([names[i] for i in sorted(names)])
    for t, i, wer in entries:
        matrix.set(t, i, wer)
    return matrix


def compare_series(stored: Series, recomputed: Series, tolerance: float = TOLERANCE) -> list[str]:
    """Human-readable differences between two metric series."""
    problems = []
    for metric in METRICS:
        want = recomputed.get(metric, {})
        have = stored.get(metric, {})
        for t in sorted(set(want) | set(have)):
            if t not in have:
                problems.append(f"{metric} at stage {t} missing from stored series")
            elif t not in want:
                problems.append(f"{metric} at stage {t} stored but not recomputable")
            elif not math.isclose(have[t], want[t], rel_tol=tolerance, abs_tol=tolerance):
                problems.append(
                    f"{metric} at stage {t}: stored {have[t]!r}, recomputed {want[t]!r}"
                )
    return problems


def verify_record(record: ExperimentRecord) -> Series:
    """Recompute the metrics from the WER matrix and references; raise on any mismatch."""
    recomputed = metric_series(record.matrix, record.references)
    problems = compare_series(record.metrics, recomputed)
    if problems:
        raise MetricError("; ".join(problems))
    return recomputed


def emit_plot_data(
    series: Series, out: Path, std: Series | None = None
) -> list[Path]:
    """One CSV per metric with stage, metric, value and (when known) std, in percent."""
    out = Path(out)
    written = []
    for metric in METRICS:
        rows = []
        for t, value in sorted(series.get(metric, {}).items()):
            spread = (std or {}).get(metric, {}).get(t)
            rows.append(
                {
                    "stage": t,
                    "metric": metric,
                    "value": repr(_percent(value)),
                    "std": "" if spread is None else repr(_percent(spread)),
                }
            )
        target = out / f"{metric}.csv"
        atomic_write_text(target, _csv_text(("stage", "metric", "value", "std"), rows))
        written.append(target)
    return written


def _fmt(value: float | None) -> str:
    return "--" if value is None or math.isnan(value) else f"{_percent(value):.2f}"


def render_report(record: ExperimentRecord) -> str:
    """Markdown body with the WER matrix and metric tables, plus a YAML summary header."""
    tasks = record.matrix.tasks
    lines = [f"# {record.strategy} ({record.regime})", "", "## WER matrix (%)", ""]
    lines.append("| stage | " + " | ".join(tasks) + " |")
    lines.append("|---" * (len(tasks) + 1) + "|")
    for t in range(1, record.matrix.size + 1):
        cells = [
            _fmt(record.matrix.get(t, i)) if record.matrix.is_set(t, i) else ""
            for i in range(1, len(tasks) + 1)
        ]
        lines.append(f"| {t} ({tasks[t - 1]}) | " + " | ".join(cells) + " |")

    lines += ["", "## Metrics (%)", "", "| stage | " + " | ".join(METRICS) + " |"]
    lines.append("|---" * (len(METRICS) + 1) + "|")
    for t in range(1, record.stages + 1):
        cells = [_fmt(record.metrics.get(m, {}).get(t)) for m in METRICS]
        lines.append(f"| {t} | " + " | ".join(cells) + " |")
    if record.warnings:
        lines += ["", "## Warnings", ""] + [f"- {w}" for w in record.warnings]

    post = frontmatter.Post(
        "\n".join(lines) + "\n",
        strategy=record.strategy,
        config_hash=record.config_hash,
        reference_hash=record.reference_hash,
        stages=record.stages,
        final_awer=record.final("awer"),
        final_bwt=record.final("bwt"),
        final_im=record.final("im"),
        final_fwt=record.final("fwt"),
        regime=record.regime,
        created=record.created,
    )
    return frontmatter.dumps(post) + "\n"


def should_skip_dir(name: str) -> bool:
    return name.startswith(".") or name in ("__pycache__", "plot", "stages")


def list_reports(root: Path) -> list[dict[str, Any]]:
    """Frontmatter of every ``report.md`` below ``root``, best final AWER first."""
    reports = []
    for current, dirs, files in os.walk(root):
        dirs[:] = sorted(d for d in dirs if not should_skip_dir(d))
        if "report.md" not in files:
            continue
        path = Path(current) / "report.md"
        try:
            post = frontmatter.load(path)
        except (OSError, UnicodeDecodeError, yaml.YAMLError) as e:
            logger.warning(f"skipping {path}: {e}")
            continue
        entry = dict(post.metadata)
        entry["path"] = str(path.parent)
        reports.append(entry)

    def key(entry: dict[str, Any]) -> tuple[bool, float]:
        value = entry.get("final_awer")
        return (value is None, float(value) if value is not None else 0.0)

    return sorted(reports, key=key)

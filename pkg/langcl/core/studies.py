"""Multi-run studies: sensitivity to language order, and the effect of pretraining imbalance."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any

import numpy as np

from langcl.core.checkpoint import atomic_write_text
from langcl.core.config import ExperimentConfig
from langcl.core.errors import ConfigError
from langcl.core.harness import (
    ReferenceRuns,
    base_model,
    load_suite,
    run_references,
    run_sequence,
    select_new,
    with_max_new,
)
from langcl.core.metrics import METRICS
from langcl.core.records import ExperimentRecord, Series, emit_plot_data, write_record
from langcl.core.seeds import stream

logger = logging.getLogger(__name__)


def make_orders(languages: Sequence[str], n_orders: int, seed: int) -> list[tuple[str, ...]]:
    """``n_orders`` seeded shuffles of ``languages``; order k depends only on (seed, k)."""
    orders = []
    for k in range(n_orders):
        perm = stream(seed, "order", k).permutation(len(languages))
        orders.append(tuple(languages[i] for i in perm))
    return orders


@dataclass
class OrderingSummary:
    strategy: str
    orders: list[tuple[str, ...]]
    records: list[ExperimentRecord]
    mean: Series = field(default_factory=dict)
    std: Series = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "orders": [list(o) for o in self.orders],
            "mean": {m: {str(t): v for t, v in s.items()} for m, s in self.mean.items()},
            "std": {m: {str(t): v for t, v in s.items()} for m, s in self.std.items()},
        }


def summarize(records: Sequence[ExperimentRecord]) -> tuple[Series, Series]:
    """Per-stage mean and population standard deviation of every metric."""
    mean: Series = {m: {} for m in METRICS}
    std: Series = {m: {} for m in METRICS}
    for metric in METRICS:
        stages = sorted(set.intersection(*(set(r.metrics.get(metric, {})) for r in records)))
        for t in stages:
            values = np.array([r.metrics[metric][t] for r in records])
            mean[metric][t] = float(values.mean())
            std[metric][t] = float(values.std(ddof=0))
    return mean, std


def _run_order(config: ExperimentConfig, references: ReferenceRuns) -> ExperimentRecord:
    return run_sequence(config, references=references)


def ordering_study(
    config: ExperimentConfig,
    n_orders: int | None = None,
    base_seed: int | None = None,
    orders: Sequence[Sequence[str]] | None = None,
    out: Path | None = None,
) -> OrderingSummary:
    """Run the sequence once per language order and aggregate the metric curves."""
    suite = load_suite(config)
    if orders is None:
        count = n_orders if n_orders is not None else config.experiment.n_orders
        if count < 2:
            raise ConfigError(f"[experiment] n_orders: need at least 2 orders, got {count}")
        languages = [d.lang for d in select_new(config.with_order(None), suite)]
        seed = base_seed if base_seed is not None else config.experiment.seed
        chosen = make_orders(languages, count, seed)
    else:
        chosen = [tuple(o) for o in orders]
        if not chosen:
            raise ConfigError("[experiment] order: no orders given")

    # Populate the base and reference caches once, before any worker needs them.
    base_model(config, suite)
    references = run_references(config, suite)

    jobs = [(config.with_order(order), references) for order in chosen]
    workers = min(config.experiment.workers, len(jobs))
    logger.info(f"ordering study: {len(jobs)} orders on {workers} worker(s)")
    if workers > 1:
        with Pool(workers) as pool:
            records = pool.starmap(_run_order, jobs)
    else:
        records = [run_sequence(cfg, suite=suite, references=refs) for cfg, refs in jobs]

    summary = OrderingSummary(config.strategy.kind, chosen, list(records))
    summary.mean, summary.std = summarize(records)
    if out is not None:
        write_ordering(summary, Path(out))
    return summary


def write_ordering(summary: OrderingSummary, out: Path) -> None:
    for k, record in enumerate(summary.records):
        write_record(record, out / f"order-{k:02d}")
    emit_plot_data(summary.mean, out / "plot", std=summary.std)
    atomic_write_text(out / "summary.json", json.dumps(summary.to_dict(), indent=2) + "\n")


@dataclass
class ImbalanceRow:
    variant: str
    strategy: str
    base_epochs: int
    wer_11: float
    wer_21: float
    bwt_2: float

    @property
    def drop(self) -> float:
        """Magnitude of first-stage forgetting on the base task."""
        return -self.bwt_2


IMBALANCE_STRATEGIES = ("FT", "ER")


def imbalance_study(
    config: ExperimentConfig, out: Path | None = None
) -> list[ImbalanceRow]:
    """First-stage forgetting with the configured base budget and with a balanced one.

    The balanced variant pretrains the base model for ``epochs_per_task``
    epochs, the same budget each new language gets.
    """
    variants = [
        ("imbalanced", config),
        ("balanced", config.with_training(base_epochs=config.training.epochs_per_task)),
    ]
    if config.training.base_epochs == config.training.epochs_per_task:
        logger.warning("base and per-language budgets already match; both variants are balanced")

    rows = []
    suite = load_suite(config)
    for variant, variant_config in variants:
        for kind in IMBALANCE_STRATEGIES:
            run_config = with_max_new(variant_config.with_strategy(kind), 1)
            record = run_sequence(run_config, suite=suite)
            if out is not None:
                write_record(record, Path(out) / f"{variant}-{kind}")
            m = record.matrix
            rows.append(
                ImbalanceRow(
                    variant,
                    kind,
                    variant_config.training.base_epochs,
                    m.get(1, 1),
                    m.get(2, 1),
                    record.metrics["bwt"][2],
                )
            )
            logger.info(f"{variant} {kind}: first-stage drop {100 * rows[-1].drop:.2f}%")

    if out is not None:
        payload = [{**asdict(row), "drop": row.drop} for row in rows]
        atomic_write_text(Path(out) / "imbalance.json", json.dumps(payload, indent=2) + "\n")
    return rows

"""Options and helpers shared by the command groups."""

from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path
from typing import NoReturn

import typer
from rich.console import Console
from rich.table import Table

from langcl.core.config import ExperimentConfig, apply_overrides, load_config
from langcl.core.errors import LangclError
from langcl.core.metrics import METRICS

console = Console()

CONFIG_HELP = "YAML config file (defaults apply to anything it leaves out)"
PRESET_HELP = "Preset the config file is layered on: default, toy or fleurs"
SEED_HELP = "Run seed, overrides experiment.seed"
STRATEGY_HELP = "Strategy kind (FT, ER, AGEM, DER, PNN, PB, L2P, EWC, LwF, MAS)"


def fail(error: Exception | str) -> NoReturn:
    typer.echo(f"Error: {error}", err=True)
    raise typer.Exit(1)


def resolve_config(
    path: Path | None,
    preset: str,
    seed: int | None = None,
    strategy: str | None = None,
) -> ExperimentConfig:
    if path is not None and not path.exists():
        fail(f"config file '{path}' does not exist")
    try:
        return apply_overrides(load_config(path, preset), seed=seed, strategy=strategy)
    except LangclError as e:
        fail(e)


def parse_order(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    order = tuple(part.strip() for part in text.split(",") if part.strip())
    if not order:
        fail("--order needs at least one language id")
    return order


def percent(value: float | None) -> str:
    return "--" if value is None else f"{100 * value:.2f}"


def metrics_table(
    series: Mapping[str, Mapping[int, float]],
    title: str,
    std: Mapping[str, Mapping[int, float]] | None = None,
) -> Table:
    """One row per stage, one column per metric, values in percent."""
    table = Table(title=title)
    table.add_column("Stage", justify="right", style="cyan")
    for metric in METRICS:
        table.add_column(metric.upper(), justify="right")
    stages = sorted({t for values in series.values() for t in values})
    for t in stages:
        cells = []
        for metric in METRICS:
            value = series.get(metric, {}).get(t)
            cell = percent(value)
            spread = (std or {}).get(metric, {}).get(t)
            if value is not None and spread is not None:
                cell += f" ± {100 * spread:.2f}"
            cells.append(cell)
        table.add_row(str(t), *cells)
    return table

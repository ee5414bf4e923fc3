from pathlib import Path
from typing import List, Optional

import typer
from rich.table import Table

from langcl.commands.common import (
    CONFIG_HELP,
    PRESET_HELP,
    SEED_HELP,
    STRATEGY_HELP,
    console,
    fail,
    metrics_table,
    parse_order,
    percent,
    resolve_config,
)
from langcl.core.errors import LangclError
from langcl.core.studies import imbalance_study, ordering_study

app = typer.Typer(help="Multi-run studies over orders and pretraining budgets")


@app.command()
def ordering(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=STRATEGY_HELP),
    out: Path = typer.Option(Path("results/ordering"), "--out", "-o", help="Output directory"),
    n_orders: Optional[int] = typer.Option(
        None, "--orders", "-n", help="Number of random orders (default experiment.n_orders)"
    ),
    order: Optional[List[str]] = typer.Option(
        None, "--order", help="Explicit comma-separated order; repeat for several"
    ),
    workers: Optional[int] = typer.Option(
        None, "--workers", "-w", help="Run orders in this many processes"
    ),
) -> None:
    """Mean and spread of every metric over shuffled new-language orders."""
    cfg = resolve_config(config, preset, seed, strategy)
    if workers is not None:
        if workers < 1:
            fail("--workers must be at least 1")
        cfg = cfg.with_workers(workers)
    explicit = [p for p in (parse_order(o) for o in order or []) if p is not None] or None

    try:
        summary = ordering_study(cfg, n_orders=n_orders, orders=explicit, out=out)
    except LangclError as e:
        fail(e)

    console.print(
        metrics_table(
            summary.mean,
            f"{summary.strategy} over {len(summary.orders)} orders (mean ± std)",
            std=summary.std,
        )
    )
    console.print(f"\n[green]Wrote study results to {out}[/green]")


@app.command()
def imbalance(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    out: Path = typer.Option(Path("results/imbalance"), "--out", "-o", help="Output directory"),
) -> None:
    """First-stage forgetting under FT and ER, with imbalanced and balanced pretraining."""
    cfg = resolve_config(config, preset, seed)
    try:
        rows = imbalance_study(cfg, out=out)
    except LangclError as e:
        fail(e)

    table = Table(title="Pretraining imbalance")
    table.add_column("Variant", style="cyan")
    table.add_column("Strategy")
    table.add_column("Base epochs", justify="right")
    table.add_column("WER 1,1 %", justify="right")
    table.add_column("WER 2,1 %", justify="right")
    table.add_column("BWT 2 %", justify="right")
    table.add_column("Drop %", justify="right", style="magenta")
    for row in rows:
        table.add_row(
            row.variant,
            row.strategy,
            str(row.base_epochs),
            percent(row.wer_11),
            percent(row.wer_21),
            percent(row.bwt_2),
            percent(row.drop),
        )
    console.print(table)
    console.print(f"\n[green]Wrote study results to {out}[/green]")

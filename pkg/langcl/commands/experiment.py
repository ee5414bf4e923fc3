import json
from pathlib import Path
from typing import Optional

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
from langcl.core.checkpoint import atomic_write_text
from langcl.core.config import config_hash, reference_hash
from langcl.core.errors import LangclError
from langcl.core.harness import run_references, run_sequence, with_max_new
from langcl.core.records import write_record

app = typer.Typer(help="Run the sequential protocol and its reference runs")


@app.command()
def run(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=STRATEGY_HELP),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Output directory (default results/<strategy>-<config hash>)"
    ),
    order: Optional[str] = typer.Option(
        None, "--order", help="Comma-separated new-language order, e.g. n02,n00,n01"
    ),
    max_new: Optional[int] = typer.Option(
        None, "--max-new", help="Stop after this many new languages"
    ),
    resume: bool = typer.Option(
        False, "--resume", help="Continue from the last stage checkpoint in --out"
    ),
) -> None:
    """Pretrain the base model, learn each new language in turn, and score every stage."""
    cfg = resolve_config(config, preset, seed, strategy)
    if order is not None:
        cfg = cfg.with_order(parse_order(order))
    if max_new is not None:
        if max_new < 1:
            fail("--max-new must be at least 1")
        cfg = with_max_new(cfg, max_new)
    target = out or Path("results") / f"{cfg.strategy.kind}-{config_hash(cfg)}"

    try:
        record = run_sequence(cfg, out=target, resume=resume)
        written = write_record(record, target)
    except LangclError as e:
        fail(e)

    console.print(metrics_table(record.metrics, f"{record.strategy} on {record.regime} tokens"))
    for warning in record.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")
    console.print(f"\n[green]Wrote {len(written)} files to {target}[/green]")


@app.command()
def refs(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Also write the references as JSON to this directory"
    ),
) -> None:
    """Joint and solo fine-tuning references (cached by reference hash)."""
    cfg = resolve_config(config, preset, seed)
    try:
        runs = run_references(cfg)
    except LangclError as e:
        fail(e)

    table = Table(title=f"References ({reference_hash(cfg)})")
    table.add_column("Task", style="cyan")
    table.add_column("Joint WER %", justify="right")
    table.add_column("Solo WER %", justify="right")
    for task, wer in runs.joint.items():
        table.add_row(task, percent(wer), percent(runs.solo.get(task)))
    console.print(table)

    if out is not None:
        target = out / "references.json"
        atomic_write_text(target, json.dumps(runs.to_dict(), indent=2) + "\n")
        console.print(f"[green]Wrote {target}[/green]")

from pathlib import Path
from typing import Optional

import typer
from rich.table import Table

from langcl.commands.common import console, fail, metrics_table, percent
from langcl.core.errors import LangclError
from langcl.core.metrics import metric_series
from langcl.core.records import (
    compare_series,
    emit_plot_data,
    list_reports,
    read_metrics_csv,
    read_record,
    read_wer_csv,
    verify_record,
)

app = typer.Typer(help="Inspect and post-process experiment results")


@app.command()
def metrics(
    path: Path = typer.Argument(..., help="Experiment directory, record.json or wer_matrix.csv"),
) -> None:
    """Recompute the metrics from a stored WER matrix and check them against the stored ones."""
    if not path.exists():
        fail(f"'{path}' does not exist")

    try:
        if path.suffix == ".csv":
            series = metric_series(read_wer_csv(path))
            title = f"Metrics from {path.name} (no references: IM and FWT omitted)"
        else:
            record = read_record(path)
            series = verify_record(record)
            title = f"{record.strategy} ({record.config_hash})"
            stored_csv = (path if path.is_dir() else path.parent) / "metrics.csv"
            if stored_csv.exists():
                problems = compare_series(read_metrics_csv(stored_csv), series, tolerance=1e-6)
                if problems:
                    fail(f"metrics.csv disagrees with the WER matrix: {'; '.join(problems)}")
    except LangclError as e:
        fail(e)

    console.print(metrics_table(series, title))
    console.print("[green]Stored metrics match the WER matrix[/green]")


@app.command("plot-data")
def plot_data(
    path: Path = typer.Argument(..., help="Experiment directory or record.json"),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Output directory (default <experiment>/plot)"
    ),
) -> None:
    """Write one CSV per metric, ready for plotting."""
    try:
        record = read_record(path)
    except LangclError as e:
        fail(e)
    target = out or (path if path.is_dir() else path.parent) / "plot"
    written = emit_plot_data(record.metrics, target)
    for p in written:
        console.print(f"  {p}")
    console.print(f"[green]Wrote {len(written)} files[/green]")


@app.command("list")
def list_results(
    root: Path = typer.Argument(Path("results"), help="Directory to search for reports"),
) -> None:
    """Every experiment below ROOT, best final AWER first."""
    if not root.is_dir():
        fail(f"'{root}' is not a directory")

    reports = list_reports(root)
    if not reports:
        console.print(f"No experiment reports found under {root}")
        return

    table = Table(title=f"Experiments under {root}")
    table.add_column("Strategy", style="cyan")
    table.add_column("Regime")
    table.add_column("Stages", justify="right")
    for metric in ("awer", "bwt", "im", "fwt"):
        table.add_column(f"{metric.upper()} %", justify="right")
    table.add_column("Path", style="dim")
    for entry in reports:
        table.add_row(
            str(entry.get("strategy", "?")),
            str(entry.get("regime", "?")),
            str(entry.get("stages", "?")),
            *(percent(entry.get(f"final_{m}")) for m in ("awer", "bwt", "im", "fwt")),
            entry["path"],
        )
    console.print(table)

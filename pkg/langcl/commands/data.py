from pathlib import Path
from typing import Optional

import typer
from rich.table import Table

from langcl.commands.common import (
    CONFIG_HELP,
    PRESET_HELP,
    SEED_HELP,
    console,
    fail,
    resolve_config,
)
from langcl.core.errors import LangclError
from langcl.core.manifest import read_suite, write_suite
from langcl.core.synth import SPLITS, build_suite_data

app = typer.Typer(help="Generate and inspect language suites")


@app.command()
def generate(
    out: Path = typer.Option(..., "--out", "-o", help="Directory for the manifests"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    inline: bool = typer.Option(
        False, "--inline", help="Embed features in the JSONL instead of binary side files"
    ),
) -> None:
    """Write the synthetic suite as manifests that data.manifest_dir can read back."""
    cfg = resolve_config(config, preset, seed)
    if cfg.data.manifest_dir:
        fail("the config already reads manifests; unset data.manifest_dir to generate")
    try:
        written = write_suite(out, build_suite_data(cfg.data), inline=inline)
    except (LangclError, OSError) as e:
        fail(e)
    console.print(f"[green]Wrote {len(written)} manifests under {out}[/green]")


@app.command()
def inspect(
    root: Path = typer.Argument(..., help="Suite directory written by 'data generate'"),
) -> None:
    """Utterance counts and vocabularies of a manifest suite."""
    try:
        suite = read_suite(root)
    except LangclError as e:
        fail(e)

    table = Table(title=f"{root} (vocabulary {suite.vocab_size})")
    table.add_column("Language", style="cyan")
    table.add_column("Role")
    table.add_column("Tokens", justify="right")
    table.add_column("Granularity")
    for split in SPLITS:
        table.add_column(split, justify="right")
    for role, languages in (("base", suite.base), ("new", suite.new)):
        for data in languages:
            table.add_row(
                data.lang,
                role,
                str(len(data.token_ids)),
                data.granularity,
                *(str(len(data.split(s))) for s in SPLITS),
            )
    console.print(table)

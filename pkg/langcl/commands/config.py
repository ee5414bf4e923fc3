from pathlib import Path
from typing import Optional

import typer

from langcl.commands.common import (
    CONFIG_HELP,
    PRESET_HELP,
    SEED_HELP,
    STRATEGY_HELP,
    console,
    fail,
    resolve_config,
)
from langcl.core.checkpoint import atomic_write_text
from langcl.core.config import (
    PRESETS,
    base_hash,
    commented_yaml,
    config_hash,
    dump_config,
    reference_hash,
)

app = typer.Typer(help="Create and inspect experiment configs")


@app.command()
def init(
    path: Path = typer.Argument(Path("langcl.yaml"), help="Where to write the config"),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    force: bool = typer.Option(False, "--force", "-f", help="Overwrite an existing file"),
) -> None:
    """Write a fully populated, commented config for PRESET."""
    if preset not in PRESETS:
        fail(f"unknown preset '{preset}'; choose from {', '.join(PRESETS)}")
    if path.exists() and not force:
        fail(f"'{path}' already exists (use --force to overwrite)")
    atomic_write_text(path, commented_yaml(resolve_config(None, preset)))
    console.print(f"[green]Wrote {path}[/green]")


@app.command()
def show(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    preset: str = typer.Option("default", "--preset", help=PRESET_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", help=SEED_HELP),
    strategy: Optional[str] = typer.Option(None, "--strategy", "-s", help=STRATEGY_HELP),
) -> None:
    """Print the effective config and the hashes that key results and caches."""
    cfg = resolve_config(config, preset, seed, strategy)
    typer.echo(dump_config(cfg), nl=False)
    console.print(f"\n[cyan]config hash:[/cyan]    {config_hash(cfg)}")
    console.print(f"[cyan]reference hash:[/cyan] {reference_hash(cfg)}")
    console.print(f"[cyan]base hash:[/cyan]      {base_hash(cfg)}")

import logging

import typer
from rich.logging import RichHandler

from langcl.commands import config, data, experiment, results, study

app = typer.Typer(help="Continual learning of new languages for CTC transcription")


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    logger = logging.getLogger("langcl")
    if not logger.handlers:
        logger.addHandler(RichHandler(show_path=False, rich_tracebacks=True))
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


app.add_typer(experiment.app, name="experiment")
app.add_typer(study.app, name="study")
app.add_typer(results.app, name="results")
app.add_typer(data.app, name="data")
app.add_typer(config.app, name="config")

# Short forms of the most used commands.
for command, name in (
    (experiment.run, "run"),
    (experiment.refs, "refs"),
    (study.ordering, "ordering"),
    (study.imbalance, "imbalance"),
    (results.metrics, "metrics"),
    (results.plot_data, "plot-data"),
):
    app.command(name, hidden=True)(command)

if __name__ == "__main__":
    app()

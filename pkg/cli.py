#!/usr/bin/env python3
"""CLI interface for nl2econ."""

import logging
import sys
from pathlib import Path

import click
from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

import pipeline
from config import PRESETS, dump_settings, load_config, preset_settings
from errors import StageError, ValidationError
from regress import MODEL_FITTERS
from synthetic import SCENARIOS, generate_synthetic

console = Console()

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    root.addHandler(RichHandler(console=Console(stderr=True), show_path=False))
    root.setLevel(level)


def _header(title: str) -> None:
    console.print()
    console.print("=" * 60, style="bold")
    console.print(title, style="bold", justify="center")
    console.print("=" * 60, style="bold")
    console.print()


def _footer() -> None:
    console.print("=" * 60, style="bold")
    console.print()


def _fail(error: Exception) -> None:
    """Show the error in a panel and exit 1 for validation problems, 2 otherwise."""
    validation = isinstance(error, ValidationError) or (isinstance(error, StageError) and error.is_validation)
    title = "Validation Error" if validation else "Runtime Error"
    if isinstance(error, StageError) and error.__cause__ is not None:
        body = f"[red]{error}[/red]\n\n[dim]Cause:[/dim] {type(error.__cause__).__name__}"
    else:
        body = f"[red]{error}[/red]"
    console.print(Panel(body, title=title, border_style="red"))
    sys.exit(EXIT_VALIDATION if validation else EXIT_RUNTIME)


def config_options(command):
    """Options shared by every command that reads a pipeline configuration."""
    options = [
        click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="YAML configuration file"),
        click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                     help="Override a config value (repeatable)"),
        click.option("--seed", type=int, help="Random seed (overrides the config)"),
        click.option("--output-dir", "-o", type=click.Path(file_okay=False), help="Output directory"),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Country or synthetic parameter preset"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _load(config_path, overrides, seed, output_dir, preset):
    return load_config(config_path, overrides, seed=seed, output_dir=output_dir, preset=preset)


def _print_summary(summary: dict) -> None:
    console.print(pipeline.summary_table(summary))
    console.print()
    # JSON-lines record on stdout, unstyled
    click.echo(pipeline.summary_json(summary))
    console.print()


@click.group()
@click.version_option(version="0.1.0")
@click.option("--verbose", "-v", is_flag=True, help="Log debug detail")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors")
def cli(verbose, quiet):
    """Nightlight rasters to gravity networks, walk features, consumption fits and community tracking."""
    _setup_logging(verbose, quiet)


@cli.command()
@config_options
def run(config_path, overrides, seed, output_dir, preset):
    """Run every pipeline stage and write the summary.

    Args:
        config_path: YAML configuration file
        overrides: section.key=value overrides
        seed: Random seed
        output_dir: Output directory
        preset: Parameter preset
    """
    _header("PIPELINE RUN")
    try:
        config = _load(config_path, overrides, seed, output_dir, preset)
        console.print(f"[bold]Output:[/bold] {config.output_dir}")
        console.print()
        report = pipeline.run_pipeline(config)
    except Exception as e:
        _fail(e)

    console.print(f"[green]Wrote {len(report.artifacts)} artifact(s)[/green]")
    console.print()
    _print_summary(report.summary)
    _footer()


def _stage_command(name: str, help_text: str):
    @config_options
    def command(config_path, overrides, seed, output_dir, preset):
        _header(f"STAGE: {name.upper()}")
        try:
            config = _load(config_path, overrides, seed, output_dir, preset)
            entries = pipeline.run_stage(config, name)
        except Exception as e:
            _fail(e)
        console.print(f"[green]Stage '{name}' complete[/green] [dim]({config.output_dir})[/dim]")
        console.print()
        if entries:
            _print_summary(entries)
        _footer()

    command.__doc__ = help_text
    return cli.command(name=name)(command)


_stage_command("ingest", "Composite rasters and aggregate them into the node lattice (nodes.csv).")
_stage_command("build-net", "Build the K-tau gravity network from nodes.csv (edges.tsv).")
_stage_command("walk", "Simulate biased random walks on edges.tsv (walks.txt).")
_stage_command("features", "Step-expectation features from walks.txt (features.csv).")
_stage_command("join", "Bin survey households and join clusters to nodes (joined.csv).")
_stage_command("fit", "Fit the configured models over repeated splits (fit_*.csv, predictions_*.csv).")
_stage_command("communities", "Detect communities per snapshot (partition_*.csv, communities_*.geojson).")
_stage_command("track", "Track communities between consecutive snapshots (transitions_*.csv).")


@cli.command()
@click.argument("scenario", type=click.Choice(sorted(SCENARIOS)))
@click.option("--seed", type=int, required=True, help="Random seed")
@click.option("--output-dir", "-o", default="./synthetic", type=click.Path(file_okay=False),
              help="Directory for rasters, survey and config.yaml")
@click.option("--noise", "noise_fraction", default=0.3, show_default=True, type=float,
              help="planted-linear: share of consumption variance not explained by the planted signal")
def synth(scenario, seed, output_dir, noise_fraction):
    """Generate a synthetic scenario with a ready-to-run config.yaml.

    Args:
        scenario: Scenario name
        seed: Random seed
        output_dir: Where to write
        noise_fraction: Noise share for planted-linear
    """
    _header("SYNTHETIC DATA")
    try:
        result = generate_synthetic(scenario, seed, output_dir, noise_fraction)
    except Exception as e:
        _fail(e)

    console.print(f"[bold]Scenario:[/bold] {scenario}")
    for path in result.rasters:
        console.print(f"  - raster: {path}")
    if result.survey is not None:
        console.print(f"  - survey: {result.survey}")
    console.print(f"  - config: {result.config}")
    console.print()
    console.print(f"[bold]Next step:[/bold] nl2econ run --config {result.config}")
    console.print()
    _footer()


@cli.command()
@click.argument("train_joined", type=click.Path(exists=True, dir_okay=False))
@click.argument("test_joined", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", type=click.Choice(sorted(MODEL_FITTERS)),
              help="Only this model (default: the configured models)")
@config_options
def transfer(train_joined, test_joined, model, config_path, overrides, seed, output_dir, preset):
    """Fit on one year's joined clusters and score on another's.

    Args:
        train_joined: joined.csv of the training year
        test_joined: joined.csv of the evaluation year
        model: Restrict to one model
    """
    _header("SPATIO-TEMPORAL TRANSFER")
    try:
        config = _load(config_path, overrides, seed, output_dir, preset)
        reports = pipeline.run_transfer(config, train_joined, test_joined, model)
    except Exception as e:
        _fail(e)

    table = Table(box=box.SIMPLE)
    table.add_column("model")
    table.add_column("train R2", justify="right")
    table.add_column("test R2", justify="right")
    for report in reports:
        table.add_row(report.model, f"{report.train_r2:.5f}", f"{report.test_r2:.5f}")
    console.print(table)
    console.print()
    _footer()


@cli.command(name="init-config")
@click.argument("preset", type=click.Choice(sorted(PRESETS)))
@click.option("--output", "-o", default="config.yaml", type=click.Path(dir_okay=False), show_default=True,
              help="Where to write the configuration")
def init_config(preset, output):
    """Write a preset's full configuration as an editable YAML file.

    Args:
        preset: Preset name
        output: Destination file
    """
    path = Path(output)
    if path.exists():
        _fail(ValidationError(f"{path} already exists"))
    dump_settings(preset_settings(preset), path)
    console.print(f"[green]Wrote {path}[/green] [dim](set 'seed' and the inputs before running)[/dim]")


if __name__ == '__main__':
    cli()

"""Command-line entry point: simulate, identify, compare and tabulate sample counts."""
import math
import os.path
from typing import Optional, Sequence

import click
import rich.markup
from rich.console import Console
from rich.table import Table

import armcmc
from . import config
from .exceptions import ArmcmcBaseException
from .experiment import DEFAULT_LAMBDAS, emit_kmin_curve, run_experiment, simulate, write_simulation
from .sampler import PrecisionReliability


def _load(config_file: Optional[str], preset: Optional[str], overrides: Sequence[str], seed: Optional[int],
          output_dir: Optional[str]) -> config.RunConfigSchema:
    overrides = list(overrides)
    if seed is not None:
        overrides.append(f"seed={seed}")
    if output_dir is not None:
        overrides.append(f"output_dir={output_dir}")
    if preset is not None:
        return config.load_preset(preset, overrides)
    return config.load_run_config(config_file, overrides)


def _report_table(report, title: str) -> Table:
    frame = report.to_frame(timing=True)
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(column, justify="left" if column == "method" else "right")
    for _, row in frame.iterrows():
        cells = []
        for column in frame.columns:
            value = row[column]
            if isinstance(value, float):
                cells.append("-" if math.isnan(value) else f"{value:.4g}")
            else:
                cells.append(str(value))
        table.add_row(*cells)
    return table


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              help="Console verbosity.")
@click.version_option(armcmc.__version__)
def cli(log_level: str):
    """Online parameter identification with adaptive recursive MCMC and its baselines."""
    armcmc.set_console_level(log_level)


@cli.command("simulate")
@click.argument("preset")
@click.option("--out", "output_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for observations.csv, truth.csv and config.yml.")
@click.option("--seed", type=int, default=None, help="Overrides the preset's seed.")
@click.argument("overrides", nargs=-1)
def simulate_cmd(preset: str, output_dir: str, seed: Optional[int], overrides):
    """Simulates the system of PRESET and writes the observations. Extra KEY=VALUE
    arguments override config entries."""
    try:
        conf = _load(None, preset, overrides, seed, output_dir)
        run = simulate(conf)
        write_simulation(run, output_dir)
        config.save_config(conf, os.path.join(output_dir, "config.yml"))
    except ArmcmcBaseException as exc:
        raise click.ClickException(str(exc))
    armcmc.log.info(f"wrote {len(run.stream)} observations to {output_dir}")


def _experiment_options(func):
    for deco in reversed([
            click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                         help="Run config YAML."),
            click.option("--preset", type=str, default=None, help="Use a shipped preset instead of --config."),
            click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None,
                         help="Output directory, overrides output_dir."),
            click.option("--seed", type=int, default=None, help="Overrides the config's seed."),
            click.argument("overrides", nargs=-1)]):
        func = deco(func)
    return func


def _run(config_file, preset, output_dir, seed, overrides, write_report: bool):
    if (config_file is None) == (preset is None):
        raise click.UsageError("exactly one of --config or --preset is required")
    try:
        conf = _load(config_file, preset, overrides, seed, output_dir)
        return run_experiment(conf, write_report=write_report)
    except ArmcmcBaseException as exc:
        raise click.ClickException(str(exc))


@cli.command()
@_experiment_options
def identify(config_file, preset, output_dir, seed, overrides):
    """Runs the configured methods and writes per-method traces and diagnostics."""
    result = _run(config_file, preset, output_dir, seed, overrides, write_report=False)
    armcmc.log.info(f"traces written to {result.output_dir}")


@cli.command()
@_experiment_options
def compare(config_file, preset, output_dir, seed, overrides):
    """Like identify, then writes report.csv and prints the error table."""
    result = _run(config_file, preset, output_dir, seed, overrides, write_report=True)
    Console().print(_report_table(result.report, f"errors per method ({result.report.prediction_metric})"))


@cli.command("kmin-curve")
@click.option("--eps", "epsilons", type=float, multiple=True, default=(0.01,), show_default=True,
              help="Precision, may be repeated.")
@click.option("--delta", "deltas", type=float, multiple=True, default=(0.9,), show_default=True,
              help="Reliability, may be repeated.")
@click.option("--lambda", "lambdas", type=float, multiple=True,
              help="Forgetting factors (default 0, 0.05, ..., 1).")
@click.option("--out", "output", required=True, type=click.Path(dir_okay=False), help="CSV file to write.")
def kmin_curve(epsilons, deltas, lambdas, output):
    """Tabulates the minimum sample count against the forgetting factor."""
    try:
        prs = [PrecisionReliability(eps, delta) for eps in epsilons for delta in deltas]
        frame = emit_kmin_curve(prs, list(lambdas) or DEFAULT_LAMBDAS, output)
    except ArmcmcBaseException as exc:
        raise click.ClickException(str(exc))
    failed = int((~frame['converged']).sum())
    if failed:
        armcmc.log.warning(f"{failed} row(s) did not converge, see the 'converged' column")
    armcmc.log.info(f"wrote {len(frame)} rows to {output}")


@cli.command("show-config")
@click.argument("section", required=False)
def show_config(section: Optional[str]):
    """Describes the run config parameters, for one SECTION or all of them."""
    sections = dict(run=config.RunConfigSchema, **config.SECTIONS)
    if section is not None and section not in sections:
        raise click.UsageError(f"unknown section '{section}', expected one of {', '.join(sections)}")
    console = Console()
    for name, schema_cls in sections.items():
        if section is not None and name != section:
            continue
        table = Table.grid("", "", "", padding=(0, 2))
        for fname, typename, default, info in config.help_rows(schema_cls):
            table.add_row(f"[bold]{fname}[/bold]", f"[dim]{rich.markup.escape(typename)}[/dim]",
                          rich.markup.escape(f"{info} (default: {default})".strip()))
        console.print(f"[bold]{name}[/bold]:")
        console.print(table)


@cli.command()
def presets():
    """Lists the shipped presets."""
    for name, conf in config.available_presets().items():
        click.echo(f"{name}: model={conf.model}, methods={','.join(conf.methods)}")


if __name__ == "__main__":
    cli()

"""Command line interface for etfscore.

This module defines the ``etfscore`` command using the ``click``
library.  Every subcommand loads and validates the run configuration
before it reads any data:

``etfscore ingest``
    Load statements, prices and PDFs into the point-in-time store under
    ``paths.output``.  Prints a count per input file.

``etfscore train``
    Build the training and validation datasets, train the network and
    write the selected checkpoint and the training log.

``etfscore score``
    Score every stock and every ETF experiment on the test rebalance
    dates.

``etfscore backtest``
    Run the top-K portfolios of each experiment against the index and
    equal-weight baselines and write the report files.

``etfscore report``
    Re-render ``report.md`` from the report CSVs of a previous backtest.

``etfscore selftest``
    Generate a synthetic market with a planted signal and run every step
    on it in-process.

``etfscore configure``
    Write the bundled default configuration to a file for editing.

Errors map to exit codes: ``1`` configuration, ``2`` data, ``3``
numeric failure.  The log level comes from ``ETFSCORE_LOG_LEVEL``
(default ``WARNING``) unless ``--verbose`` is given.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import Optional, Tuple

import click

from . import __version__
from .config import RunConfig, load_config, write_default_config
from .errors import EtfScoreError, SelftestFailure
from .pipeline import backtest, ingest, locked_output, score, train_model
from .report import render_report
from .synthetic import SyntheticSpec, run_selftest

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "ETFSCORE_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _setup_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        name = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)


class EtfScoreGroup(click.Group):
    """Turns library errors into the documented exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except EtfScoreError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)
        except click.UsageError as exc:
            exc.show()
            ctx.exit(1)


def _config(ctx: click.Context) -> RunConfig:
    options = ctx.obj
    return load_config(options["config"], options["overrides"])


@click.group(cls=EtfScoreGroup, context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="etfscore")
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Run configuration (YAML), merged over the bundled defaults.",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="SECTION.KEY=VALUE",
    help="Override one configuration value; repeatable.",
)
@click.option("--verbose", "-v", count=True, help="-v for info, -vv for debug logging.")
@click.pass_context
def cli(
    ctx: click.Context, config_path: Optional[Path], overrides: Tuple[str, ...], verbose: int
) -> None:
    """Score ETFs from their holdings with a fundamentals-based stock classifier."""
    _setup_logging(verbose)
    ctx.obj = {"config": config_path, "overrides": list(overrides)}


@cli.command(name="ingest")
@click.pass_context
def ingest_cmd(ctx: click.Context) -> None:
    """Load the input files into the point-in-time store."""
    config = _config(ctx)
    with locked_output(config.paths.output):
        store, reports = ingest(config)
    for report in reports:
        line = f"{report.path}: {report.count} records"
        if report.skipped_lines:
            line += f", {len(report.skipped_lines)} skipped"
        click.echo(line)
        for note in report.notes:
            click.echo(f"  {note}")
    counts = ", ".join(f"{k}={v}" for k, v in store.summary().items())
    click.echo(f"Store written to {config.paths.store} ({counts})")


@cli.command(name="train")
@click.pass_context
def train_cmd(ctx: click.Context) -> None:
    """Train the classifier and save the selected checkpoint."""
    config = _config(ctx)
    with locked_output(config.paths.output):
        run = train_model(config)
    best = run.best
    click.echo(
        f"Selected iteration {best.iteration} "
        f"({best.metric_name}={best.metric_value:.6f}, {run.n_evaluations} evaluations)"
    )
    click.echo(f"Checkpoint: {config.paths.checkpoint}")
    click.echo(f"Training log: {config.paths.training_log}")


@cli.command(name="score")
@click.pass_context
def score_cmd(ctx: click.Context) -> None:
    """Score stocks and ETFs on every test rebalance date."""
    config = _config(ctx)
    with locked_output(config.paths.output):
        result = score(config)
    click.echo(f"{len(result.stock_scores)} stock scores")
    for name, rankings in result.etf_rankings.items():
        scored = sum(len(r.scores) for r in rankings)
        excluded = sum(len(r.exclusions) for r in rankings)
        click.echo(f"{name}: {scored} ETF scores, {excluded} exclusions")
    for path in result.files:
        click.echo(f"  {path}")


@cli.command(name="backtest")
@click.option("--experiment", "-e", default=None, help="Run one experiment only.")
@click.pass_context
def backtest_cmd(ctx: click.Context, experiment: Optional[str]) -> None:
    """Backtest every experiment and write the comparison reports."""
    config = _config(ctx)
    if experiment is not None:
        config.experiment(experiment)
    with locked_output(config.paths.output):
        results = backtest(config, only=experiment)
    for name, rows in results.items():
        click.echo(f"{name}:")
        for row in rows:
            click.echo(
                f"  {row.label:<16} return {row.annual_return:7.2f}%  "
                f"vol {row.volatility:6.2f}%  sharpe {row.sharpe:5.2f}"
            )
        click.echo(f"  reports in {config.paths.reports / name}")


@cli.command(name="report")
@click.option("--experiment", "-e", default=None, help="Re-render one experiment only.")
@click.pass_context
def report_cmd(ctx: click.Context, experiment: Optional[str]) -> None:
    """Re-render report.md from the CSVs of a previous backtest."""
    config = _config(ctx)
    names = [config.experiment(experiment).name] if experiment else [e.name for e in config.experiments]
    with locked_output(config.paths.output):
        for name in names:
            click.echo(str(render_report(config.paths.reports / name, name)))


@cli.command(name="selftest")
@click.option(
    "--output",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("selftest-out"),
    show_default=True,
    help="Directory for the synthetic inputs and every output.",
)
@click.option("--tickers", type=int, default=SyntheticSpec.n_tickers, show_default=True)
@click.option("--quarters", type=int, default=SyntheticSpec.n_quarters, show_default=True)
@click.option("--maxiter", type=int, default=5000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Training seed.")
def selftest_cmd(output: Path, tickers: int, quarters: int, maxiter: int, seed: int) -> None:
    """Run the whole pipeline on synthetic data with a planted signal."""
    spec = SyntheticSpec(n_tickers=tickers, n_quarters=quarters)
    result = run_selftest(output, spec, maxiter=maxiter, seed=seed)
    click.echo(f"oracle validation accuracy  {result.oracle_accuracy:.3f}")
    click.echo(f"model validation accuracy   {result.validation_accuracy:.3f}")
    click.echo(f"top 20% total return        {result.top_return:.2f}%")
    click.echo(f"equal weight total return   {result.equal_weight_return:.2f}%")
    click.echo(f"checkpoint {result.checkpoint_fingerprint}")
    if not result.passed:
        raise SelftestFailure(result.failures, detail=f"outputs in {output}")
    click.echo("selftest passed")


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path), default="etfscore.yaml")
@click.option("--force", is_flag=True, help="Overwrite an existing file.")
def configure(path: Path, force: bool) -> None:
    """Write the default configuration to PATH for editing."""
    written = write_default_config(path, force=force)
    click.echo(f"Default configuration written to {written}")


def main() -> None:
    try:
        code = cli.main(prog_name="etfscore", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    sys.exit(code if isinstance(code, int) else 0)


if __name__ == "__main__":
    main()

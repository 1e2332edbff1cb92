"""The ingest, train, score and backtest steps behind the subcommands.

Each step takes a validated :class:`~etfscore.config.RunConfig`,
reads what the previous step left under ``paths.output`` and writes
its own files there::

    out/store/{statements,prices,pdfs}.csv           ingest
    out/model/checkpoint.npz, training_log.csv,
              train_dataset.csv, validation_dataset.csv   train
    out/scores/stock_scores.csv, <experiment>_scores.csv,
               <experiment>_exclusions.csv                score
    out/reports/<experiment>/...                          backtest

Steps accept an already loaded store so the selftest can run them in
one process without re-reading files.
"""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from .backtest import BacktestReport, PortfolioSpec, run_backtest
from .busdays import BusinessCalendar, RebalanceCalendar, quarter_rebalance_dates
from .config import ExperimentConfig, RunConfig
from .errors import ConfigError, ShapeError
from .features import FeaturePipeline, LabeledSample, Split, denominator_floors, export_dataset
from .report import compare_baselines, write_reports
from .scoring import (
    Ranking,
    Scorer,
    StockScore,
    read_rankings,
    write_etf_scores,
    write_exclusions,
    write_stock_scores,
)
from .store import IngestReport, PitStore, load_etf_universe, load_index_series, load_stock_universe
from .training import Checkpoint, TrainingRun, load_checkpoint, save_checkpoint, train, write_training_log

logger = logging.getLogger(__name__)

LOCK_NAME = ".etfscore.lock"
STOCK_SCORES = "stock_scores.csv"


@contextlib.contextmanager
def locked_output(directory: Path) -> Iterator[Path]:
    """Hold ``directory/.etfscore.lock`` for the duration of a run.

    An existing lock is never removed here; the error names it so a
    stale one can be deleted by hand.  A directory created here is
    removed again when the run leaves it empty.
    """
    directory = Path(directory)
    created = not directory.exists()
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError as exc:
        raise ConfigError(
            f"{directory} is in use by another run ({lock} exists; delete it if stale)"
        ) from exc
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield directory
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()
        if created:
            with contextlib.suppress(OSError):
                directory.rmdir()


def open_calendar(config: RunConfig) -> BusinessCalendar:
    return BusinessCalendar.from_file(config.paths.holidays)


def rebalance_calendar(config: RunConfig, calendar: BusinessCalendar) -> RebalanceCalendar:
    """Quarter-end rebalance dates from the start of training to the end of the test range."""
    splits = config.splits
    return quarter_rebalance_dates(calendar, splits.train_start, splits.test_end)


def test_calendar(config: RunConfig, calendar: BusinessCalendar) -> RebalanceCalendar:
    splits = config.splits
    return quarter_rebalance_dates(calendar, splits.test_start, splits.test_end)


def load_store(config: RunConfig) -> PitStore:
    return PitStore.load(config.paths.store, open_calendar(config))


def stock_universe(config: RunConfig, store: PitStore) -> List[str]:
    """The configured stock list, or every ticker with statements."""
    path = config.paths.stock_universe
    if path is not None and path.exists():
        return load_stock_universe(path)
    if path is not None:
        logger.warning("stock universe %s not found, using every ticker with statements", path)
    return store.statement_tickers


def ingest(config: RunConfig) -> Tuple[PitStore, List[IngestReport]]:
    """Load the input files into a store and save it under the output directory."""
    required = ["paths.statements", "paths.prices", "paths.holidays"]
    if config.paths.pdfs is not None:
        required.append("paths.pdfs")
    config.require_inputs(required)
    store = PitStore(open_calendar(config))
    reports = [
        store.ingest_statements(config.paths.statements),
        store.ingest_prices(config.paths.prices),
    ]
    if config.paths.pdfs is not None:
        reports.append(store.ingest_pdfs(config.paths.pdfs))
    store.save(config.paths.store)
    return store, reports


def build_datasets(
    config: RunConfig, store: PitStore
) -> Tuple[List[LabeledSample], List[LabeledSample], FeaturePipeline]:
    """Training and validation samples, with floors fitted on the training range."""
    universe = stock_universe(config, store)
    features = config.features
    floors = denominator_floors(store, universe, features.names, config.splits.validation_start)
    pipeline = FeaturePipeline(
        store,
        features.names,
        floors=floors,
        clip_bound=features.clip_bound,
        max_imputed_frac=features.max_imputed_frac,
        max_inactive_days=features.max_inactive_days,
    )
    calendar = rebalance_calendar(config, store.calendar)
    calendar.validate(store.calendar)
    train_samples = pipeline.build_dataset(calendar, universe, Split.TRAIN, config.splits)
    val_samples = pipeline.build_dataset(calendar, universe, Split.VALIDATION, config.splits)
    return train_samples, val_samples, pipeline


def train_model(config: RunConfig, store: Optional[PitStore] = None) -> TrainingRun:
    """Build datasets, train, and write the checkpoint, log and dataset files."""
    store = store if store is not None else load_store(config)
    train_samples, val_samples, pipeline = build_datasets(config, store)
    model_dir = config.paths.checkpoint.parent
    model_dir.mkdir(parents=True, exist_ok=True)
    export_dataset(train_samples, model_dir / "train_dataset.csv")
    export_dataset(val_samples, model_dir / "validation_dataset.csv")
    run = train(train_samples, val_samples, config.train, pipeline.features, pipeline.floors)
    save_checkpoint(run.best, config.paths.checkpoint)
    write_training_log(run, config.paths.training_log)
    return run


def _checked_checkpoint(config: RunConfig) -> Checkpoint:
    checkpoint = load_checkpoint(config.paths.checkpoint, len(config.features.names))
    if tuple(checkpoint.features) != tuple(config.features.names):
        raise ShapeError(
            "checkpoint features differ from features.names: "
            f"{', '.join(checkpoint.features)}"
        )
    return checkpoint


@dataclass
class ScoreResult:
    stock_scores: List[StockScore] = field(default_factory=list)
    etf_rankings: Dict[str, List[Ranking]] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)


def score(
    config: RunConfig, store: Optional[PitStore] = None, checkpoint: Optional[Checkpoint] = None
) -> ScoreResult:
    """Score stocks and every ETF experiment on each test rebalance date."""
    store = store if store is not None else load_store(config)
    checkpoint = checkpoint if checkpoint is not None else _checked_checkpoint(config)
    features = config.features
    scorer = Scorer.from_checkpoint(
        checkpoint,
        store,
        clip_bound=features.clip_bound,
        max_imputed_frac=features.max_imputed_frac,
        max_inactive_days=features.max_inactive_days,
        min_coverage=config.scoring.min_coverage,
        stale_pdf_days=config.scoring.stale_pdf_days,
    )
    dates = list(test_calendar(config, store.calendar))
    if not dates:
        raise ConfigError("no rebalance dates in the test range")
    out_dir = config.paths.scores
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ScoreResult()

    universe = stock_universe(config, store)
    for asof in dates:
        result.stock_scores.extend(scorer.score_stock(t, asof) for t in sorted(set(universe)))
    result.files.append(write_stock_scores(result.stock_scores, out_dir / STOCK_SCORES))

    for exp in config.experiments:
        if exp.is_stocks:
            continue
        listings = load_etf_universe(exp.universe_path(config.paths, config.base_dir))
        rankings = [scorer.score_universe(listings, asof) for asof in dates]
        result.etf_rankings[exp.name] = rankings
        result.files.append(write_etf_scores(rankings, out_dir / f"{exp.name}_scores.csv"))
        result.files.append(write_exclusions(rankings, out_dir / f"{exp.name}_exclusions.csv"))
    return result


def _score_file(config: RunConfig, exp: ExperimentConfig) -> Path:
    name = STOCK_SCORES if exp.is_stocks else f"{exp.name}_scores.csv"
    return config.paths.scores / name


def backtest_experiment(
    config: RunConfig, exp: ExperimentConfig, store: PitStore
) -> List[BacktestReport]:
    """Index, EW and every configured portfolio of one experiment, report files written."""
    rankings = read_rankings(_score_file(config, exp))
    calendar = test_calendar(config, store.calendar)
    if exp.start is not None:
        calendar = calendar.between(exp.start, config.splits.test_end)
    end = config.splits.test_end
    options = {
        "calendar": calendar,
        "start": exp.start,
        "drift": config.backtest.drift,
        "cost_per_turnover": config.backtest.cost_per_turnover,
    }
    equal_weight = run_backtest(rankings, PortfolioSpec.equal_weight(), store, end, **options)
    reports = [run_backtest(rankings, spec, store, end, **options) for spec in exp.portfolios]

    index = None
    if config.paths.index is not None and config.paths.index.exists():
        index = load_index_series(config.paths.index)
    elif config.paths.index is not None:
        logger.warning("index file %s not found; report has no index row", config.paths.index)
    rows = compare_baselines(reports, equal_weight, index, config.backtest.index_name)
    write_reports(exp.name, rows, config.paths.reports / exp.name)
    return rows


def backtest(
    config: RunConfig, store: Optional[PitStore] = None, only: Optional[str] = None
) -> Dict[str, List[BacktestReport]]:
    store = store if store is not None else load_store(config)
    experiments = [config.experiment(only)] if only else list(config.experiments)
    if not experiments:
        raise ConfigError("no experiments configured")
    return {exp.name: backtest_experiment(config, exp, store) for exp in experiments}

"""Synthetic market with a planted signal, and the end-to-end selftest.

:func:`generate` writes a complete set of input files for a universe
of synthetic stocks whose next-quarter return is a noisy increasing
function of the latest quarter-over-quarter growth in total revenue.
A handful of synthetic ETFs hold fixed baskets of those stocks.  The
data carries the kinds of defects the pipeline must tolerate: blank
feature cells, zero-volume suspensions, cash lines in the PDFs and a
late-listed ETF.

:func:`run_selftest` generates the data, runs every pipeline step
in-process and checks that the trained model recovers the signal.
"""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression

from .busdays import BusinessCalendar
from .config import load_config, save_config
from .errors import ConfigError
from .features import WINDOW_QUARTERS, to_arrays
from .metrics import total_return
from .network import evaluate
from .pipeline import backtest, build_datasets, ingest, locked_output, score, train_model
from .store import FEATURE_COLUMNS

logger = logging.getLogger(__name__)

SIGNAL_FEATURE = "total_revenue"
ORACLE_MIN_ACCURACY = 0.70
MODEL_MIN_ACCURACY = 0.65
SUSPENSION_DAYS = 10


@dataclass(frozen=True)
class SyntheticSpec:
    n_tickers: int = 200
    n_quarters: int = 40
    first_year: int = 2010
    seed: int = 7
    signal: float = 0.08
    noise: float = 0.04
    daily_vol: float = 0.012
    n_etfs: int = 10
    etf_size: int = 20
    cash_weight: float = 0.01
    blank_rate: float = 0.005
    n_suspensions: int = 5

    def __post_init__(self) -> None:
        if self.n_quarters < WINDOW_QUARTERS + 8:
            raise ConfigError(f"need at least {WINDOW_QUARTERS + 8} quarters, got {self.n_quarters}")
        if self.n_tickers < 20:
            raise ConfigError(f"need at least 20 tickers, got {self.n_tickers}")
        if self.etf_size > self.n_tickers:
            raise ConfigError("etf_size exceeds the number of tickers")


@dataclass(frozen=True)
class SyntheticFiles:
    directory: Path
    statements: Path
    prices: Path
    pdfs: Path
    stocks: Path
    etfs: Path
    index: Path
    rebalance_dates: Sequence[_dt.date]


def _quarter_end(year: int, quarter: int) -> _dt.date:
    month = 3 * quarter + 3
    return (pd.Timestamp(year=year, month=month, day=1) + pd.offsets.MonthEnd(0)).date()


def _zscore(values: np.ndarray) -> np.ndarray:
    std = values.std()
    return (values - values.mean()) / std if std > 0 else np.zeros_like(values)


def _statements(
    rng: np.random.Generator, spec: SyntheticSpec, tickers: List[str]
) -> Tuple[pd.DataFrame, np.ndarray]:
    """Positive random walks per feature; returns the frame and the revenue growth."""
    q = spec.n_quarters
    n = len(tickers)
    period_ends = [_quarter_end(spec.first_year + k // 4, k % 4) for k in range(q)]
    rows: Dict[str, np.ndarray] = {}
    for name in FEATURE_COLUMNS:
        level = np.exp(rng.uniform(6.0, 11.0, size=(n, 1)))
        if name == SIGNAL_FEATURE:
            growth = rng.normal(0.02, 0.08, size=(n, q))
        else:
            growth = rng.normal(0.01, 0.05, size=(n, q))
        growth[:, 0] = 0.0
        rows[name] = level * np.cumprod(1.0 + growth, axis=1)
    blanks = rng.random(size=(n, q, len(FEATURE_COLUMNS))) < spec.blank_rate
    frame = pd.DataFrame(
        {
            "ticker": np.repeat(tickers, q),
            "period_end": [d.isoformat() for d in period_ends] * n,
            "available_from": "",
        }
    )
    for j, name in enumerate(FEATURE_COLUMNS):
        values = rows[name].copy()
        values[blanks[:, :, j]] = np.nan
        frame[name] = values.reshape(-1)
    return frame, rows[SIGNAL_FEATURE]


def _price_paths(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    revenue: np.ndarray,
    days: List[_dt.date],
    rebalance: List[_dt.date],
) -> np.ndarray:
    """Daily closes pinned to planted quarter returns between rebalance dates.

    The return over ``(t_j, t_j+1]`` is driven by revenue growth of the
    statement released at ``t_j`` (quarter ``j - 1`` over ``j - 2``).
    """
    n = revenue.shape[0]
    day_index = {d: i for i, d in enumerate(days)}
    log_prices = np.zeros((n, len(days)))
    log_prices[:, 0] = np.log(rng.uniform(20.0, 100.0, size=n))
    anchors = [0] + [day_index[t] for t in rebalance]
    for j, (lo, hi) in enumerate(zip(anchors[:-1], anchors[1:])):
        steps = hi - lo
        if steps <= 0:
            continue
        period = j - 1  # segment j ends at rebalance j - 1; segment 0 is the lead-in
        market = rng.normal(0.02, 0.05)
        quarter_return = market + rng.normal(0.0, spec.noise, size=n)
        if period >= 2:
            growth = revenue[:, period - 1] / revenue[:, period - 2] - 1.0
            quarter_return = quarter_return + spec.signal * _zscore(growth)
        quarter_return = np.maximum(quarter_return, -0.9)
        wiggle = rng.normal(0.0, spec.daily_vol, size=(n, steps))
        wiggle -= wiggle.mean(axis=1, keepdims=True)
        daily = np.log1p(quarter_return)[:, None] / steps + wiggle
        log_prices[:, lo + 1 : hi + 1] = log_prices[:, [lo]] + np.cumsum(daily, axis=1)
    return np.exp(log_prices)


def generate(
    directory: Path, spec: SyntheticSpec = SyntheticSpec(),
    calendar: Optional[BusinessCalendar] = None,
) -> SyntheticFiles:
    """Write statements, prices, PDFs, universes and an index file under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    calendar = calendar if calendar is not None else BusinessCalendar()
    rng = np.random.default_rng(spec.seed)
    tickers = [f"S{i:03d}" for i in range(spec.n_tickers)]

    statements, revenue = _statements(rng, spec, tickers)
    rebalance = [
        calendar.last_business_day_of_month(spec.first_year + k // 4, 3 * (k % 4) + 3)
        for k in range(spec.n_quarters + 1)
    ]
    days = calendar.business_days(_dt.date(spec.first_year, 1, 1), rebalance[-1])
    closes = _price_paths(rng, spec, revenue, days, rebalance)

    volume = rng.integers(10_000, 1_000_000, size=closes.shape).astype(np.float64)
    for i in rng.choice(spec.n_tickers, size=spec.n_suspensions, replace=False):
        first = int(rng.integers(len(days) // 4, len(days) - SUSPENSION_DAYS))
        volume[i, first : first + SUSPENSION_DAYS] = 0.0

    # ETFs: fixed baskets, weights reset to target at every rebalance date.
    etf_names = [f"SYN{e:02d}" for e in range(spec.n_etfs)]
    baskets = [
        np.sort(rng.choice(spec.n_tickers, size=spec.etf_size, replace=False))
        for _ in etf_names
    ]
    basket_weights = [rng.dirichlet(np.ones(spec.etf_size)) * (1.0 - spec.cash_weight) for _ in etf_names]
    anchors = [0] + [days.index(t) for t in rebalance]
    etf_closes = np.zeros((spec.n_etfs, len(days)))
    for e, (basket, weights) in enumerate(zip(baskets, basket_weights)):
        nav = 100.0
        etf_closes[e, 0] = nav
        for lo, hi in zip(anchors[:-1], anchors[1:]):
            rel = closes[basket, lo : hi + 1] / closes[basket, lo][:, None]
            invested = weights @ rel + spec.cash_weight
            etf_closes[e, lo : hi + 1] = nav * invested
            nav = etf_closes[e, hi]

    pdf_rows = []
    for t in rebalance:
        for name, basket, weights in zip(etf_names, baskets, basket_weights):
            pdf_rows.extend(
                {"etf": name, "date": t.isoformat(), "ticker": tickers[i], "weight": w}
                for i, w in zip(basket, weights)
            )
            pdf_rows.append(
                {"etf": name, "date": t.isoformat(), "ticker": "CASH", "weight": spec.cash_weight}
            )

    inception = [days[0]] * spec.n_etfs
    inception[-1] = rebalance[-6]

    day_text = [d.isoformat() for d in days]
    all_names = tickers + etf_names
    all_closes = np.vstack([closes, etf_closes])
    all_volume = np.vstack([volume, np.full(etf_closes.shape, 50_000.0)])
    prices = pd.DataFrame(
        {
            "ticker": np.repeat(all_names, len(days)),
            "date": day_text * len(all_names),
            "close": all_closes.reshape(-1),
            "volume": all_volume.reshape(-1),
        }
    )
    index = pd.DataFrame(
        {"date": day_text, "close": 1000.0 * (closes / closes[:, [0]]).mean(axis=0)}
    )

    files = SyntheticFiles(
        directory=directory,
        statements=directory / "statements.csv",
        prices=directory / "prices.csv",
        pdfs=directory / "pdfs.csv",
        stocks=directory / "stocks.csv",
        etfs=directory / "etfs.csv",
        index=directory / "index.csv",
        rebalance_dates=tuple(rebalance),
    )
    options = {"index": False, "float_format": "%.17g", "lineterminator": "\n"}
    statements.to_csv(files.statements, **options)
    prices.to_csv(files.prices, **options)
    pd.DataFrame(pdf_rows, columns=["etf", "date", "ticker", "weight"]).to_csv(files.pdfs, **options)
    pd.DataFrame({"ticker": tickers}).to_csv(files.stocks, **options)
    pd.DataFrame(
        {"etf": etf_names, "inception": [d.isoformat() for d in inception]}
    ).to_csv(files.etfs, **options)
    index.to_csv(files.index, **options)
    logger.info(
        "generated %d tickers x %d quarters and %d ETFs in %s",
        spec.n_tickers,
        spec.n_quarters,
        spec.n_etfs,
        directory,
    )
    return files


def selftest_config(files: SyntheticFiles, maxiter: int, seed: int) -> Dict[str, object]:
    """Run configuration for the synthetic inputs, paths relative to the output directory.

    Of the rebalance dates with a full statement window, roughly the
    first half trains, the next quarter validates and the rest is the
    test range.
    """
    usable = list(files.rebalance_dates[WINDOW_QUARTERS + 1 :])
    n_train = len(usable) // 2
    n_val = len(usable) // 4
    inputs = files.directory.name
    miniter = maxiter // 2
    return {
        "paths": {
            "statements": f"{inputs}/statements.csv",
            "prices": f"{inputs}/prices.csv",
            "pdfs": f"{inputs}/pdfs.csv",
            "stock_universe": f"{inputs}/stocks.csv",
            "index": f"{inputs}/index.csv",
            "holidays": None,
            "output": ".",
        },
        "splits": {
            "train_start": usable[0].isoformat(),
            "validation_start": usable[n_train].isoformat(),
            "test_start": usable[n_train + n_val].isoformat(),
            "test_end": usable[-1].isoformat(),
        },
        "train": {
            "maxiter": maxiter,
            "miniter": miniter,
            "batch_size": 128,
            "save_interval": max(1, (maxiter - miniter) // 10),
            "learning_rate": 0.001,
            "seed": seed,
        },
        "backtest": {"index_name": "Synthetic index"},
        "experiments": {
            "stocks": {
                "universe": "stocks",
                "portfolios": [{"top_k_percent": 60}, {"top_k_percent": 20}],
            },
            "classic": None,
            "exotic": None,
            "synthetic_etfs": {
                "universe": f"{inputs}/etfs.csv",
                "portfolios": [{"top_k_count": 5}, {"top_k_count": 3}],
            },
        },
    }


@dataclass
class SelftestResult:
    output: Path
    oracle_accuracy: float
    validation_accuracy: float
    top_return: float
    equal_weight_return: float
    checkpoint_fingerprint: str
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def run_selftest(
    output: Path,
    spec: SyntheticSpec = SyntheticSpec(),
    maxiter: int = 5000,
    seed: int = 0,
) -> SelftestResult:
    """Generate synthetic data, run every step, and check the planted signal is found.

    Checks: a logistic regression on the same windows reaches
    :data:`ORACLE_MIN_ACCURACY` on validation (the data is learnable),
    the network reaches :data:`MODEL_MIN_ACCURACY`, and over the test
    range the top 20% stock portfolio ends above the equal-weight one.
    """
    output = Path(output)
    with locked_output(output):
        files = generate(output / "inputs", spec)
        config_path = save_config(selftest_config(files, maxiter, seed), output / "config.yaml")
        config = load_config(config_path)

        store, _ = ingest(config)
        train_samples, val_samples, _ = build_datasets(config, store)
        X_train, y_train = to_arrays(train_samples)
        X_val, y_val = to_arrays(val_samples)
        oracle = LogisticRegression(max_iter=2000)
        oracle.fit(X_train, y_train)
        oracle_accuracy = float(oracle.score(X_val, y_val))

        run = train_model(config, store)
        validation_accuracy, _ = evaluate(run.best.params, X_val, y_val)
        score(config, store, run.best)
        reports = backtest(config, store)

    stock_rows = {r.label: r for r in reports["stocks"]}
    top_return = total_return(stock_rows["Top 20%"].values)
    ew_return = total_return(stock_rows["EW"].values)

    failures = []
    if oracle_accuracy < ORACLE_MIN_ACCURACY:
        failures.append(
            f"logistic oracle reached {oracle_accuracy:.3f} < {ORACLE_MIN_ACCURACY}: data not learnable"
        )
    if validation_accuracy < MODEL_MIN_ACCURACY:
        failures.append(
            f"validation accuracy {validation_accuracy:.3f} < {MODEL_MIN_ACCURACY}"
        )
    if not top_return > ew_return:
        failures.append(
            f"top 20% return {top_return:.2f}% does not beat equal weight {ew_return:.2f}%"
        )
    result = SelftestResult(
        output=output,
        oracle_accuracy=oracle_accuracy,
        validation_accuracy=validation_accuracy,
        top_return=top_return,
        equal_weight_return=ew_return,
        checkpoint_fingerprint=run.best.fingerprint(),
        failures=failures,
    )
    logger.info("selftest %s", "passed" if result.passed else "failed")
    return result

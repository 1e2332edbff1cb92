"""Shared fixtures: a weekends-only calendar and a small hand-built market.

The market has six stocks ``A``..``F`` with twelve quarterly statements
(2019Q1-2021Q4) whose every feature grows by a fixed rate per quarter,
and daily closes that grow by a fixed rate per business day, ``A``
fastest.  ``F`` has zero volume for the ten business days up to
2021-12-31, so it fails the liquidity filter at that date only.

ETFs at 2021-12-31:

* ``E1`` – A and B, half each
* ``E2`` – C 0.6, D 0.39 and a 0.01 cash line
* ``E3`` – only a PDF from 2021-06-30 (stale)
* ``E4`` – F 0.9, A 0.1 (low coverage while F is illiquid)
* ``E5`` – listed but no PDF at all
* ``E6`` – incepted 2022-01-14
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
import pytest

from etfscore.busdays import BusinessCalendar
from etfscore.store import FEATURE_COLUMNS, PitStore

TICKERS = ["A", "B", "C", "D", "E", "F"]
QUARTER_GROWTH = {"A": 0.05, "B": 0.04, "C": 0.03, "D": 0.02, "E": 0.01, "F": 0.0}
DAILY_GROWTH = {"A": 0.0012, "B": 0.0010, "C": 0.0008, "D": 0.0006, "E": 0.0004, "F": 0.0002}
ETF_DAILY_GROWTH = {"E1": 0.0003, "E2": 0.0002, "E3": 0.0001, "E4": 0.00005}
PRICE_START = _dt.date(2019, 1, 1)
PRICE_END = _dt.date(2022, 9, 30)
SUSPENDED_UNTIL = _dt.date(2021, 12, 31)

REBALANCE = [
    _dt.date(2021, 12, 31),
    _dt.date(2022, 3, 31),
    _dt.date(2022, 6, 30),
    _dt.date(2022, 9, 30),
]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs that train a network")


def quarter_ends(first_year: int, n: int) -> List[_dt.date]:
    ends = []
    for k in range(n):
        year, q = first_year + k // 4, k % 4
        month = 3 * q + 3
        ends.append((pd.Timestamp(year=year, month=month, day=1) + pd.offsets.MonthEnd(0)).date())
    return ends


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


@dataclass
class Market:
    directory: Path
    calendar: BusinessCalendar
    statements: Path
    prices: Path
    pdfs: Path
    stocks: Path
    etfs: Path
    index: Path
    holidays: Path
    days: List[_dt.date]

    def store(self) -> PitStore:
        store = PitStore(self.calendar)
        store.ingest_statements(self.statements)
        store.ingest_prices(self.prices)
        store.ingest_pdfs(self.pdfs)
        return store

    def close(self, ticker: str, day: _dt.date) -> float:
        growth = {**DAILY_GROWTH, **ETF_DAILY_GROWTH}[ticker]
        base = 50.0 if ticker.startswith("E") else 100.0
        return base * (1.0 + growth) ** self.days.index(day)


@pytest.fixture
def calendar() -> BusinessCalendar:
    """Weekends only, no holidays."""
    return BusinessCalendar([])


def _statement_rows() -> pd.DataFrame:
    rows: List[Dict[str, object]] = []
    for i, ticker in enumerate(TICKERS):
        for k, period_end in enumerate(quarter_ends(2019, 12)):
            level = 1000.0 * (i + 1) * (1.0 + QUARTER_GROWTH[ticker]) ** k
            row: Dict[str, object] = {
                "ticker": ticker,
                "period_end": period_end.isoformat(),
                "available_from": "",
            }
            row.update({name: level for name in FEATURE_COLUMNS})
            rows.append(row)
    return pd.DataFrame(rows)


def _pdf_rows() -> pd.DataFrame:
    rows = []
    for day in ("2021-12-31", "2022-03-31", "2022-06-30", "2022-09-30"):
        rows += [
            ("E1", day, "A", 0.5),
            ("E1", day, "B", 0.5),
            ("E2", day, "C", 0.6),
            ("E2", day, "D", 0.39),
            ("E2", day, "CASH", 0.01),
            ("E4", day, "F", 0.9),
            ("E4", day, "A", 0.1),
        ]
    rows += [("E3", "2021-06-30", "E", 1.0)]
    return pd.DataFrame(rows, columns=["etf", "date", "ticker", "weight"])


@pytest.fixture
def market(tmp_path: Path, calendar: BusinessCalendar) -> Market:
    directory = tmp_path / "inputs"
    directory.mkdir()
    days = calendar.business_days(PRICE_START, PRICE_END)
    suspended = set(calendar.business_days(calendar.shift(SUSPENDED_UNTIL, -9), SUSPENDED_UNTIL))

    price_rows = []
    for ticker, growth in {**DAILY_GROWTH, **ETF_DAILY_GROWTH}.items():
        base = 50.0 if ticker.startswith("E") else 100.0
        closes = base * (1.0 + growth) ** np.arange(len(days))
        for day, close in zip(days, closes):
            volume = 0.0 if ticker == "F" and day in suspended else 1000.0
            price_rows.append((ticker, day.isoformat(), close, volume))
    prices = pd.DataFrame(price_rows, columns=["ticker", "date", "close", "volume"])

    index = pd.DataFrame(
        {
            "date": [d.isoformat() for d in days],
            "close": 1000.0 * 1.0003 ** np.arange(len(days)),
        }
    )
    etfs = pd.DataFrame(
        {
            "etf": ["E1", "E2", "E3", "E4", "E5", "E6"],
            "inception": ["2010-01-04"] * 5 + ["2022-01-14"],
        }
    )
    return Market(
        directory=directory,
        calendar=calendar,
        statements=write_frame(directory / "statements.csv", _statement_rows()),
        prices=write_frame(directory / "prices.csv", prices),
        pdfs=write_frame(directory / "pdfs.csv", _pdf_rows()),
        stocks=write_frame(directory / "stocks.csv", pd.DataFrame({"ticker": TICKERS})),
        etfs=write_frame(directory / "etfs.csv", etfs),
        index=write_frame(directory / "index.csv", index),
        holidays=write_frame(directory / "holidays.csv", pd.DataFrame({"date": []})),
        days=days,
    )


@pytest.fixture
def store(market: Market) -> PitStore:
    return market.store()


@pytest.fixture
def market_config(market: Market, tmp_path: Path) -> Path:
    """A run configuration over the market files with a tiny training budget."""
    text = f"""\
paths:
  statements: {market.statements}
  prices: {market.prices}
  pdfs: {market.pdfs}
  stock_universe: {market.stocks}
  index: {market.index}
  holidays: {market.holidays}
  output: {tmp_path / "out"}
splits:
  train_start: 2021-12-01
  validation_start: 2022-03-01
  test_start: 2022-04-01
  test_end: 2022-09-30
train:
  maxiter: 40
  miniter: 20
  batch_size: 4
  save_interval: 10
  learning_rate: 0.001
experiments:
  stocks:
    universe: stocks
    portfolios:
      - top_k_percent: 50
  classic: null
  exotic: null
  market_etfs:
    universe: {market.etfs}
    portfolios:
      - top_k_count: 1
"""
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return path

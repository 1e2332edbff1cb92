"""Point-in-time store for statements, prices and ETF holdings.

The store is filled once from three delimited files and then answers
as-of queries that never look past the requested date:

* ``statements.csv`` – quarterly financial statements, one row per
  ``(ticker, period_end)`` with the eleven features listed in
  :data:`FEATURE_COLUMNS`.  A blank ``available_from`` is filled in
  with :func:`etfscore.busdays.derive_available_from`.
* ``prices.csv`` – daily ``ticker,date,close,volume`` bars for stocks,
  ETFs and anything else a backtest holds.
* ``pdfs.csv`` – portfolio deposit files in long format,
  ``etf,date,ticker,weight``.

Ingestion is all-or-nothing per file: every row is parsed and checked
before anything is committed.  After ingestion the store is only
read, so queries may run concurrently.
"""

from __future__ import annotations

import bisect
import datetime as _dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .busdays import BusinessCalendar, derive_available_from
from .errors import (
    ConfigError,
    DataError,
    DuplicateRecordError,
    MissingDataError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

FEATURE_COLUMNS: Tuple[str, ...] = (
    "total_revenue",
    "operating_income",
    "net_income",
    "total_asset",
    "current_asset",
    "total_equity",
    "current_liabilities",
    "invested_capital",
    "free_cashflow",
    "operating_cashflow",
    "market_capital",
)

FEATURE_LABELS: Mapping[str, str] = {
    "total_revenue": "Total Revenue",
    "operating_income": "Operating Income",
    "net_income": "Net Income",
    "total_asset": "Total Asset",
    "current_asset": "Current Asset",
    "total_equity": "Total Equity",
    "current_liabilities": "Current Liabilities",
    "invested_capital": "Invested Capital",
    "free_cashflow": "Free Cashflow",
    "operating_cashflow": "Operating Cashflow",
    "market_capital": "Market Capital",
}

STATEMENT_KEYS = ("ticker", "period_end", "available_from")
PRICE_COLUMNS = ("ticker", "date", "close", "volume")
PDF_COLUMNS = ("etf", "date", "ticker", "weight")

# PDF lines that are not listed equities (cash, currency, blank ticker).
NON_EQUITY_TICKERS = frozenset({"", "CASH", "USD", "-"})
PDF_WEIGHT_TOLERANCE = 0.02

# Bars further back than this many business days are too old to stand in
# for a missing close.
DEFAULT_PRICE_LAG = 5


@dataclass(frozen=True)
class StatementRecord:
    """One quarterly financial statement; NaN marks a missing feature."""

    ticker: str
    period_end: _dt.date
    available_from: _dt.date
    features: Dict[str, float]

    def is_missing(self, name: str) -> bool:
        return math.isnan(self.features[name])


@dataclass(frozen=True)
class PriceBar:
    ticker: str
    date: _dt.date
    close: float
    volume: float


@dataclass(frozen=True)
class PdfSnapshot:
    """Equity holdings of one ETF at one date.

    ``residual`` is the weight carried by non-equity lines (cash etc.)
    that were dropped at ingest.
    """

    etf: str
    date: _dt.date
    holdings: Tuple[Tuple[str, float], ...]
    residual: float = 0.0

    @property
    def weights(self) -> Dict[str, float]:
        return dict(self.holdings)

    @property
    def total_weight(self) -> float:
        return math.fsum(w for _, w in self.holdings)


@dataclass(frozen=True)
class EtfListing:
    etf: str
    inception: _dt.date


@dataclass
class IngestReport:
    """Outcome of ingesting one file."""

    path: str
    count: int
    skipped_lines: List[int] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


@dataclass
class _PriceHistory:
    dates: np.ndarray  # datetime64[D], strictly increasing
    close: np.ndarray
    volume: np.ndarray


def _cell(value: object) -> str:
    return value.strip() if isinstance(value, str) else ""


def _read_table(path: Path, required: Sequence[str]) -> pd.DataFrame:
    """Read a delimited file as strings and check its header."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        # pandas reports "... in line N ..." for ragged rows.
        text = str(exc)
        line = 0
        marker = " line "
        if marker in text:
            digits = text.split(marker, 1)[1].split(",", 1)[0].split()[0]
            if digits.isdigit():
                line = int(digits)
        raise ParseError(str(path), line, text) from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")
    return frame


def _parse_dates(
    column: Iterable[object], path: Path, name: str, allow_blank: bool = False
) -> List[Optional[_dt.date]]:
    parsed: List[Optional[_dt.date]] = []
    cache: Dict[str, _dt.date] = {}
    for offset, raw in enumerate(column):
        text = _cell(raw)
        if not text:
            if allow_blank:
                parsed.append(None)
                continue
            raise ParseError(str(path), offset + 2, f"{name} is blank")
        day = cache.get(text)
        if day is None:
            try:
                day = _dt.date.fromisoformat(text)
            except ValueError:
                raise ParseError(str(path), offset + 2, f"{name}={text!r} is not an ISO date")
            cache[text] = day
        parsed.append(day)
    return parsed


def _parse_numbers(
    column: Iterable[object], path: Path, name: str, allow_blank: bool = False
) -> np.ndarray:
    values: List[float] = []
    for offset, raw in enumerate(column):
        text = _cell(raw)
        if not text:
            if allow_blank:
                values.append(math.nan)
                continue
            raise ParseError(str(path), offset + 2, f"{name} is blank")
        try:
            value = float(text)
        except ValueError:
            raise ParseError(str(path), offset + 2, f"{name}={text!r} is not a number")
        if not math.isfinite(value):
            raise ParseError(str(path), offset + 2, f"{name}={text!r} is not finite")
        values.append(value)
    return np.array(values, dtype=np.float64)


def _parse_tickers(column: Iterable[object], path: Path, name: str) -> List[str]:
    tickers = []
    for offset, raw in enumerate(column):
        text = _cell(raw)
        if not text:
            raise ParseError(str(path), offset + 2, f"{name} is blank")
        tickers.append(text)
    return tickers


def _format_float(value: float) -> str:
    """Shortest text that parses back to the same float; blank for NaN."""
    if math.isnan(value):
        return ""
    return repr(float(value))


class PitStore:
    """In-memory point-in-time store with leakage-safe as-of queries."""

    def __init__(self, calendar: Optional[BusinessCalendar] = None) -> None:
        self.calendar = calendar if calendar is not None else BusinessCalendar()
        self._statements: Dict[str, List[StatementRecord]] = {}
        self._prices: Dict[str, _PriceHistory] = {}
        self._pdfs: Dict[str, List[PdfSnapshot]] = {}
        self._pdf_dates: Dict[str, List[_dt.date]] = {}

    # ------------------------------------------------------------------
    # ingestion

    def ingest_statements(self, path: Path) -> IngestReport:
        """Parse and persist a statements file; returns the ingest report."""
        path = Path(path)
        frame = _read_table(path, ("ticker", "period_end"))
        unknown = [
            c for c in frame.columns if c not in STATEMENT_KEYS and c not in FEATURE_COLUMNS
        ]
        if unknown:
            raise SchemaError(f"{path}: unknown feature columns {', '.join(unknown)}")
        absent = [c for c in FEATURE_COLUMNS if c not in frame.columns]
        if absent:
            raise SchemaError(f"{path}: missing feature columns {', '.join(absent)}")

        tickers = _parse_tickers(frame["ticker"], path, "ticker")
        period_ends = _parse_dates(frame["period_end"], path, "period_end")
        if "available_from" in frame.columns:
            explicit = _parse_dates(
                frame["available_from"], path, "available_from", allow_blank=True
            )
        else:
            explicit = [None] * len(frame)
        values = {
            name: _parse_numbers(frame[name], path, name, allow_blank=True)
            for name in FEATURE_COLUMNS
        }

        lines_by_key: Dict[Tuple[str, _dt.date], List[int]] = defaultdict(list)
        for offset, key in enumerate(zip(tickers, period_ends)):
            lines_by_key[key].append(offset + 2)
        duplicate_lines = [
            line
            for key, lines in lines_by_key.items()
            if len(lines) > 1 or self._has_statement(*key)
            for line in lines
        ]
        if duplicate_lines:
            raise DuplicateRecordError(str(path), "(ticker, period_end)", duplicate_lines)

        derived: Dict[_dt.date, _dt.date] = {}
        records: List[StatementRecord] = []
        for offset, (ticker, period_end, available) in enumerate(
            zip(tickers, period_ends, explicit)
        ):
            if available is None:
                available = derived.get(period_end)
                if available is None:
                    available = derive_available_from(period_end, self.calendar)
                    derived[period_end] = available
            if available < period_end:
                raise ParseError(
                    str(path),
                    offset + 2,
                    f"available_from {available} precedes period_end {period_end}",
                )
            features = {name: float(values[name][offset]) for name in FEATURE_COLUMNS}
            records.append(StatementRecord(ticker, period_end, available, features))

        for record in records:
            self._statements.setdefault(record.ticker, []).append(record)
        for ticker in {r.ticker for r in records}:
            self._statements[ticker].sort(key=lambda r: r.period_end)
        logger.info("ingested %d statements from %s", len(records), path)
        return IngestReport(str(path), len(records))

    def _has_statement(self, ticker: str, period_end: _dt.date) -> bool:
        return any(r.period_end == period_end for r in self._statements.get(ticker, ()))

    def ingest_prices(self, path: Path) -> IngestReport:
        """Parse and persist a daily price file."""
        path = Path(path)
        frame = _read_table(path, PRICE_COLUMNS)
        tickers = _parse_tickers(frame["ticker"], path, "ticker")
        dates = _parse_dates(frame["date"], path, "date")
        close = _parse_numbers(frame["close"], path, "close")
        volume = _parse_numbers(frame["volume"], path, "volume")
        for offset in np.flatnonzero(close <= 0):
            raise ParseError(str(path), int(offset) + 2, "close must be strictly positive")
        for offset in np.flatnonzero(volume < 0):
            raise ParseError(str(path), int(offset) + 2, "volume must be non-negative")

        keys = pd.DataFrame({"ticker": tickers, "date": dates})
        clash = keys.duplicated(keep=False).to_numpy()
        for offset, (ticker, day) in enumerate(zip(tickers, dates)):
            hist = self._prices.get(ticker)
            if hist is not None and np.datetime64(day, "D") in hist.dates:
                clash[offset] = True
        if clash.any():
            raise DuplicateRecordError(
                str(path), "(ticker, date)", (int(i) + 2 for i in np.flatnonzero(clash))
            )

        rows_by_ticker: Dict[str, List[int]] = defaultdict(list)
        for offset, ticker in enumerate(tickers):
            rows_by_ticker[ticker].append(offset)
        day_array = np.array(dates, dtype="datetime64[D]")
        for ticker, rows in rows_by_ticker.items():
            idx = np.array(rows)
            new_dates, new_close, new_volume = day_array[idx], close[idx], volume[idx]
            hist = self._prices.get(ticker)
            if hist is not None:
                new_dates = np.concatenate([hist.dates, new_dates])
                new_close = np.concatenate([hist.close, new_close])
                new_volume = np.concatenate([hist.volume, new_volume])
            order = np.argsort(new_dates, kind="stable")
            self._prices[ticker] = _PriceHistory(
                new_dates[order], new_close[order], new_volume[order]
            )
        logger.info("ingested %d price bars from %s", len(tickers), path)
        return IngestReport(str(path), len(tickers))

    def ingest_pdfs(self, path: Path) -> IngestReport:
        """Parse and persist portfolio deposit files in long format.

        Weights of each ``(etf, date)`` snapshot, non-equity lines
        included, must sum to one within :data:`PDF_WEIGHT_TOLERANCE`.
        Only equity lines are stored; the rest is kept as ``residual``.
        """
        path = Path(path)
        frame = _read_table(path, PDF_COLUMNS)
        etfs = _parse_tickers(frame["etf"], path, "etf")
        dates = _parse_dates(frame["date"], path, "date")
        components = [_cell(t) for t in frame["ticker"]]
        weights = _parse_numbers(frame["weight"], path, "weight")
        for offset in np.flatnonzero(weights < 0):
            raise ParseError(str(path), int(offset) + 2, "weight must be non-negative")

        groups: Dict[Tuple[str, _dt.date], List[int]] = defaultdict(list)
        for offset, key in enumerate(zip(etfs, dates)):
            groups[key].append(offset)

        report = IngestReport(str(path), 0)
        snapshots: List[PdfSnapshot] = []
        for (etf, day), rows in groups.items():
            if day in self._pdf_dates.get(etf, ()):
                raise DuplicateRecordError(
                    str(path), f"snapshot ({etf}, {day})", (r + 2 for r in rows)
                )
            seen: Dict[str, List[int]] = defaultdict(list)
            for r in rows:
                if components[r].upper() not in NON_EQUITY_TICKERS:
                    seen[components[r]].append(r + 2)
            dupes = [line for lines in seen.values() if len(lines) > 1 for line in lines]
            if dupes:
                raise DuplicateRecordError(str(path), f"ticker in ({etf}, {day})", dupes)
            total = math.fsum(weights[r] for r in rows)
            if abs(total - 1.0) > PDF_WEIGHT_TOLERANCE:
                raise DataError(
                    f"{path}: weights of ({etf}, {day}) on lines {rows[0] + 2}-{rows[-1] + 2} "
                    f"sum to {total:.6f}, outside 1 +/- {PDF_WEIGHT_TOLERANCE}"
                )
            holdings = []
            residual_rows = []
            for r in rows:
                if components[r].upper() in NON_EQUITY_TICKERS:
                    residual_rows.append(r)
                else:
                    holdings.append((components[r], float(weights[r])))
            residual = math.fsum(weights[r] for r in residual_rows)
            if residual_rows:
                report.skipped_lines.extend(r + 2 for r in residual_rows)
                report.notes.append(f"{etf} {day}: non-equity residual {residual:.6f}")
            snapshots.append(PdfSnapshot(etf, day, tuple(holdings), residual))

        for snap in snapshots:
            self._pdfs.setdefault(snap.etf, []).append(snap)
        for etf in {s.etf for s in snapshots}:
            self._pdfs[etf].sort(key=lambda s: s.date)
            self._pdf_dates[etf] = [s.date for s in self._pdfs[etf]]
        report.count = len(snapshots)
        if report.skipped_lines:
            logger.info(
                "%s: dropped %d non-equity PDF lines", path, len(report.skipped_lines)
            )
        logger.info("ingested %d PDF snapshots from %s", len(snapshots), path)
        return report

    # ------------------------------------------------------------------
    # queries

    def derive_available_from(self, period_end: _dt.date) -> _dt.date:
        return derive_available_from(period_end, self.calendar)

    @property
    def statement_tickers(self) -> List[str]:
        return sorted(self._statements)

    @property
    def price_tickers(self) -> List[str]:
        return sorted(self._prices)

    @property
    def etfs(self) -> List[str]:
        return sorted(self._pdfs)

    def statements(self, ticker: str) -> List[StatementRecord]:
        return list(self._statements.get(ticker, ()))

    def iter_statements(self) -> Iterator[StatementRecord]:
        for ticker in self.statement_tickers:
            yield from self._statements[ticker]

    def statements_asof(self, ticker: str, asof: _dt.date, n: int) -> List[StatementRecord]:
        """The ``n`` latest records released on or before ``asof``.

        Records come back ordered by ``period_end``; an unknown ticker
        yields an empty list.
        """
        if n < 1:
            raise ConfigError(f"n must be positive, got {n}")
        released = [r for r in self._statements.get(ticker, ()) if r.available_from <= asof]
        return released[-n:]

    def bars(self, ticker: str) -> List[PriceBar]:
        hist = self._prices.get(ticker)
        if hist is None:
            return []
        return [
            PriceBar(ticker, d.item(), float(c), float(v))
            for d, c, v in zip(hist.dates, hist.close, hist.volume)
        ]

    def is_valid_stock(
        self,
        ticker: str,
        window_start: _dt.date,
        window_end: _dt.date,
        max_inactive_days: int = 5,
    ) -> bool:
        """Liquidity filter over the business days in ``(window_start, window_end]``.

        A business day counts as inactive when there is no bar or the bar
        has zero volume; more than ``max_inactive_days`` inactive days
        make the stock invalid.  A stock with no prices is never valid.
        """
        if window_start >= window_end:
            raise ConfigError(f"empty liquidity window {window_start}..{window_end}")
        hist = self._prices.get(ticker)
        if hist is None:
            return False
        days = self.calendar.business_days(window_start + _dt.timedelta(days=1), window_end)
        if not days:
            return False
        traded = hist.dates[hist.volume > 0]
        active = np.isin(np.array(days, dtype="datetime64[D]"), traded)
        inactive = len(days) - int(active.sum())
        return inactive <= max_inactive_days

    def close_asof(
        self, ticker: str, day: _dt.date, max_lag: Optional[int] = DEFAULT_PRICE_LAG
    ) -> Optional[Tuple[_dt.date, float]]:
        """Last close at or before ``day``.

        With ``max_lag`` set, a bar older than ``max_lag`` business days
        before ``day`` does not count.
        """
        hist = self._prices.get(ticker)
        if hist is None:
            return None
        idx = int(np.searchsorted(hist.dates, np.datetime64(day, "D"), side="right")) - 1
        if idx < 0:
            return None
        bar_day = hist.dates[idx].item()
        if max_lag is not None and bar_day < self.calendar.shift(day, -max_lag):
            return None
        return bar_day, float(hist.close[idx])

    def forward_return(self, ticker: str, t: _dt.date, t_next: _dt.date) -> float:
        """Simple return between the closes at ``t`` and ``t_next``."""
        closes = []
        for day in (t, t_next):
            found = self.close_asof(ticker, day)
            if found is None:
                raise MissingDataError(
                    f"no close for {ticker} within {DEFAULT_PRICE_LAG} business days before {day}"
                )
            closes.append(found[1])
        start, end = closes
        return (end - start) / start

    def close_frame(self, tickers: Sequence[str], days: Sequence[_dt.date]) -> pd.DataFrame:
        """Daily closes on ``days``, carried forward from the last bar.

        Cells before an instrument's first bar are NaN.  After its last
        bar the final close is carried forward indefinitely.
        """
        index = pd.DatetimeIndex(pd.to_datetime(list(days)))
        columns: Dict[str, pd.Series] = {}
        for ticker in tickers:
            hist = self._prices.get(ticker)
            if hist is None:
                columns[ticker] = pd.Series(np.nan, index=index)
                continue
            series = pd.Series(hist.close, index=pd.DatetimeIndex(hist.dates))
            columns[ticker] = series.reindex(series.index.union(index)).ffill().reindex(index)
        return pd.DataFrame(columns, index=index, columns=list(tickers))

    def pdf_asof(self, etf: str, asof: _dt.date) -> PdfSnapshot:
        """Latest snapshot of ``etf`` dated on or before ``asof``."""
        dates = self._pdf_dates.get(etf, [])
        idx = bisect.bisect_right(dates, asof) - 1
        if idx < 0:
            raise MissingDataError(f"no PDF for {etf} on or before {asof}")
        return self._pdfs[etf][idx]

    def summary(self) -> Dict[str, int]:
        return {
            "statements": sum(len(v) for v in self._statements.values()),
            "price_bars": sum(len(h.dates) for h in self._prices.values()),
            "pdf_snapshots": sum(len(v) for v in self._pdfs.values()),
        }

    # ------------------------------------------------------------------
    # persistence

    def save(self, directory: Path) -> None:
        """Write the store as the three ingest files under ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        statement_rows = [
            {
                "ticker": r.ticker,
                "period_end": r.period_end.isoformat(),
                "available_from": r.available_from.isoformat(),
                **{name: _format_float(r.features[name]) for name in FEATURE_COLUMNS},
            }
            for r in self.iter_statements()
        ]
        pd.DataFrame(statement_rows, columns=list(STATEMENT_KEYS + FEATURE_COLUMNS)).to_csv(
            directory / "statements.csv", index=False
        )

        price_rows = [
            {
                "ticker": ticker,
                "date": str(d),
                "close": _format_float(c),
                "volume": _format_float(v),
            }
            for ticker in self.price_tickers
            for d, c, v in zip(
                self._prices[ticker].dates,
                self._prices[ticker].close,
                self._prices[ticker].volume,
            )
        ]
        pd.DataFrame(price_rows, columns=list(PRICE_COLUMNS)).to_csv(
            directory / "prices.csv", index=False
        )

        pdf_rows = []
        for etf in self.etfs:
            for snap in self._pdfs[etf]:
                day = snap.date.isoformat()
                for ticker, weight in snap.holdings:
                    pdf_rows.append(
                        {"etf": etf, "date": day, "ticker": ticker, "weight": _format_float(weight)}
                    )
                if snap.residual:
                    pdf_rows.append(
                        {"etf": etf, "date": day, "ticker": "CASH", "weight": _format_float(snap.residual)}
                    )
        pd.DataFrame(pdf_rows, columns=list(PDF_COLUMNS)).to_csv(
            directory / "pdfs.csv", index=False
        )
        logger.info("saved store to %s", directory)

    @classmethod
    def load(cls, directory: Path, calendar: Optional[BusinessCalendar] = None) -> "PitStore":
        """Re-ingest a directory written by :meth:`save`."""
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigError(f"store directory {directory} does not exist; run ingest first")
        store = cls(calendar)
        for name, ingest in (
            ("statements.csv", store.ingest_statements),
            ("prices.csv", store.ingest_prices),
            ("pdfs.csv", store.ingest_pdfs),
        ):
            if (directory / name).exists():
                ingest(directory / name)
        return store


def load_stock_universe(path: Path) -> List[str]:
    """Tickers listed in a ``ticker`` column, de-duplicated, file order kept."""
    frame = _read_table(Path(path), ("ticker",))
    tickers = _parse_tickers(frame["ticker"], Path(path), "ticker")
    return list(dict.fromkeys(tickers))


def load_etf_universe(path: Path) -> List[EtfListing]:
    """ETF listings from an ``etf,inception`` file (extra columns ignored)."""
    path = Path(path)
    frame = _read_table(path, ("etf", "inception"))
    etfs = _parse_tickers(frame["etf"], path, "etf")
    inceptions = _parse_dates(frame["inception"], path, "inception")
    return [EtfListing(e, d) for e, d in zip(etfs, inceptions)]


def load_index_series(path: Path) -> pd.Series:
    """Index closes from a ``date,close`` file as a date-indexed series."""
    path = Path(path)
    frame = _read_table(path, ("date", "close"))
    dates = _parse_dates(frame["date"], path, "date")
    closes = _parse_numbers(frame["close"], path, "close")
    for offset in np.flatnonzero(closes <= 0):
        raise ParseError(str(path), int(offset) + 2, "close must be strictly positive")
    series = pd.Series(closes, index=pd.DatetimeIndex(pd.to_datetime(dates)), name="close")
    return series.sort_index()


__all__ = [
    "FEATURE_COLUMNS",
    "FEATURE_LABELS",
    "EtfListing",
    "IngestReport",
    "PdfSnapshot",
    "PitStore",
    "PriceBar",
    "StatementRecord",
    "load_etf_universe",
    "load_index_series",
    "load_stock_universe",
]

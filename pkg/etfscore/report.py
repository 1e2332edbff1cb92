"""Baseline comparison and report files.

For one experiment the backtest reports of every configured portfolio
are lined up with the two baselines, the external index series and the
equal-weight (top 100%) portfolio, and written as:

* ``summary.csv`` – return, volatility and Sharpe per portfolio
* ``annual.csv`` – the per-year breakdown of every portfolio
* ``holdings.csv`` – every position with its entry and exit date
* ``daily_value.csv`` – the daily value series, one column per portfolio
* ``report.md`` – the summary and annual tables in markdown
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .backtest import BacktestReport, PortfolioSpec
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.csv"
ANNUAL_FILE = "annual.csv"
HOLDINGS_FILE = "holdings.csv"
DAILY_FILE = "daily_value.csv"
MARKDOWN_FILE = "report.md"


def index_report(
    series: pd.Series, start: pd.Timestamp, end: pd.Timestamp, name: str
) -> BacktestReport:
    """Metrics of the index closes between ``start`` and ``end``, rebased to 1.0.

    A series that does not span the whole range is cut to the
    overlapping part with a warning.
    """
    closes = pd.Series(series, dtype=np.float64)
    closes.index = pd.DatetimeIndex(closes.index)
    closes = closes.sort_index()
    window = closes[(closes.index >= start) & (closes.index <= end)]
    if len(window) < 3:
        raise DataError(f"index series has fewer than 3 closes between {start.date()} and {end.date()}")
    if closes.index[0] > start or closes.index[-1] < end:
        logger.warning(
            "index series covers %s..%s only; %s truncated to %s..%s",
            closes.index[0].date(),
            closes.index[-1].date(),
            name,
            window.index[0].date(),
            window.index[-1].date(),
        )
    rebased = window / window.iloc[0]
    return BacktestReport.from_values(PortfolioSpec(name=name, top_k_percent=100.0), rebased)


def compare_baselines(
    reports: Sequence[BacktestReport],
    equal_weight: BacktestReport,
    index_series: Optional[pd.Series] = None,
    index_name: str = "S&P 500",
) -> List[BacktestReport]:
    """Rows of the comparison table: index, EW, then ``reports`` in order."""
    rows: List[BacktestReport] = []
    if index_series is not None:
        values = equal_weight.values
        rows.append(index_report(index_series, values.index[0], values.index[-1], index_name))
    rows.append(equal_weight)
    rows.extend(reports)
    return rows


def summary_frame(rows: Sequence[BacktestReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "portfolio": r.label,
                "start": r.values.index[0].date().isoformat(),
                "end": r.values.index[-1].date().isoformat(),
                "annual_return": r.annual_return,
                "volatility": r.volatility,
                "sharpe": r.sharpe,
            }
            for r in rows
        ],
        columns=["portfolio", "start", "end", "annual_return", "volatility", "sharpe"],
    )


def annual_frame(rows: Sequence[BacktestReport]) -> pd.DataFrame:
    frames = []
    for r in rows:
        annual = r.annual.copy()
        annual.insert(0, "portfolio", r.label)
        annual["start"] = [d.isoformat() for d in annual["start"]]
        annual["end"] = [d.isoformat() for d in annual["end"]]
        frames.append(annual)
    return pd.concat(frames, ignore_index=True)


def holdings_frame(rows: Sequence[BacktestReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "portfolio": r.label,
                "entry": h.entry.isoformat(),
                "exit": h.exit.isoformat(),
                "instrument": h.instrument,
                "weight": h.weight,
            }
            for r in rows
            for h in r.holdings
        ],
        columns=["portfolio", "entry", "exit", "instrument", "weight"],
    )


def daily_frame(rows: Sequence[BacktestReport]) -> pd.DataFrame:
    frame = pd.concat({r.label: r.values for r in rows}, axis=1).sort_index()
    frame.index = [d.date().isoformat() for d in frame.index]
    frame.index.name = "date"
    return frame


def _fmt(value: float) -> str:
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.2f}"


def _markdown_table(header: Sequence[str], body: Sequence[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * len(header)) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in body)
    return lines


def render_markdown(
    title: str,
    summary: pd.DataFrame,
    annual: pd.DataFrame,
    annual_portfolios: Optional[Sequence[str]] = None,
) -> str:
    """Summary table plus a per-year table for a few portfolios.

    By default the per-year table shows the first two rows of the
    summary (the baselines) and its last row.
    """
    if summary.empty:
        raise DataError("nothing to report: summary is empty")
    start, end = summary["start"].min(), summary["end"].max()
    lines = [f"# {title}", "", f"Period: {start} to {end}", ""]
    lines += _markdown_table(
        ["Portfolio", "Annual Return (%)", "Volatility (%)", "Sharpe Ratio"],
        [
            [str(row.portfolio), _fmt(row.annual_return), _fmt(row.volatility), _fmt(row.sharpe)]
            for row in summary.itertuples(index=False)
        ],
    )
    names = list(summary["portfolio"])
    if annual_portfolios is None:
        annual_portfolios = list(dict.fromkeys(names[:2] + names[-1:]))
    shown = [p for p in annual_portfolios if p in set(annual["portfolio"])]
    if shown:
        years = sorted(set(annual["year"]))
        body = []
        for year in years:
            cells = [str(year)]
            for name in shown:
                match = annual[(annual["portfolio"] == name) & (annual["year"] == year)]
                if match.empty:
                    cells += ["-", "-"]
                else:
                    cells += [_fmt(match["return"].iloc[0]), _fmt(match["volatility"].iloc[0])]
            body.append(cells)
        header = ["Year"]
        for name in shown:
            header += [f"{name} Return (%)", f"{name} Volatility (%)"]
        lines += ["", "## Annual results", ""] + _markdown_table(header, body)
    return "\n".join(lines) + "\n"


def write_reports(title: str, rows: Sequence[BacktestReport], directory: Path) -> Dict[str, Path]:
    """Write every report file for one experiment under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = summary_frame(rows)
    annual = annual_frame(rows)
    written = {
        SUMMARY_FILE: directory / SUMMARY_FILE,
        ANNUAL_FILE: directory / ANNUAL_FILE,
        HOLDINGS_FILE: directory / HOLDINGS_FILE,
        DAILY_FILE: directory / DAILY_FILE,
        MARKDOWN_FILE: directory / MARKDOWN_FILE,
    }
    options = {"float_format": "%.17g", "lineterminator": "\n"}
    summary.to_csv(written[SUMMARY_FILE], index=False, **options)
    annual.to_csv(written[ANNUAL_FILE], index=False, **options)
    holdings_frame(rows).to_csv(written[HOLDINGS_FILE], index=False, **options)
    daily_frame(rows).to_csv(written[DAILY_FILE], **options)
    written[MARKDOWN_FILE].write_text(render_markdown(title, summary, annual), encoding="utf-8")
    logger.info("wrote %s reports to %s", title, directory)
    return written


def render_report(directory: Path, title: Optional[str] = None) -> Path:
    """Re-render ``report.md`` from the CSV files in ``directory``."""
    directory = Path(directory)
    summary_path = directory / SUMMARY_FILE
    annual_path = directory / ANNUAL_FILE
    for path in (summary_path, annual_path):
        if not path.is_file():
            raise ConfigError(f"{path} not found; run backtest first")
    summary = pd.read_csv(summary_path, dtype={"portfolio": str, "start": str, "end": str})
    annual = pd.read_csv(annual_path, dtype={"portfolio": str, "start": str, "end": str})
    target = directory / MARKDOWN_FILE
    target.write_text(
        render_markdown(title or directory.name, summary, annual), encoding="utf-8"
    )
    return target

"""Top-K equal-weight portfolios on the rebalance calendar.

At each rebalance date the top-ranked instruments are bought at equal
weight and held until the next rebalance date (or ``end`` for the last
period).  Within a period the positions drift with their prices; the
portfolio value chains multiplicatively across periods and starts at
1.0 on the first rebalance date.

An instrument whose last close before entry is more than five business
days old cannot be bought; its weight goes to the other selections.
A position whose prices stop mid-period is carried at its last close.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .busdays import RebalanceCalendar
from .errors import ConfigError, CoverageGapError
from .metrics import annual_breakdown, summarize
from .store import DEFAULT_PRICE_LAG, PitStore
from .validator import validate_portfolio

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PortfolioSpec:
    """How many of the ranked instruments to hold."""

    name: str = ""
    top_k_count: Optional[int] = None
    top_k_percent: Optional[float] = None

    def __post_init__(self) -> None:
        ok, reason = validate_portfolio(self.top_k_count, self.top_k_percent)
        if not ok:
            raise ConfigError(reason)

    @classmethod
    def equal_weight(cls) -> "PortfolioSpec":
        return cls(name="EW", top_k_percent=100.0)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.top_k_count is not None:
            return f"Top {self.top_k_count}"
        return f"Top {self.top_k_percent:g}%"

    def selection_size(self, n: int) -> int:
        """Number of instruments taken from a ranking of ``n``."""
        if self.top_k_count is not None:
            if self.top_k_count > n:
                logger.warning(
                    "%s: only %d instruments ranked, holding all of them", self.label, n
                )
            return min(self.top_k_count, n)
        return min(n, math.ceil(round(n * self.top_k_percent / 100.0, 9)))


@dataclass(frozen=True)
class Holding:
    instrument: str
    weight: float
    entry: _dt.date
    exit: _dt.date


@dataclass
class BacktestReport:
    spec: PortfolioSpec
    values: pd.Series
    holdings: List[Holding] = field(default_factory=list)
    annual_return: float = float("nan")
    volatility: float = float("nan")
    sharpe: float = float("nan")
    annual: pd.DataFrame = field(default_factory=pd.DataFrame)
    turnover: Dict[_dt.date, float] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.spec.label

    @classmethod
    def from_values(
        cls,
        spec: PortfolioSpec,
        values: pd.Series,
        holdings: Optional[List[Holding]] = None,
        turnover: Optional[Dict[_dt.date, float]] = None,
    ) -> "BacktestReport":
        """Compute every metric from the value series alone."""
        stats = summarize(values)
        return cls(
            spec=spec,
            values=values,
            holdings=holdings or [],
            annual_return=stats["annual_return"],
            volatility=stats["volatility"],
            sharpe=stats["sharpe"],
            annual=annual_breakdown(values),
            turnover=turnover or {},
        )


def select_portfolio(
    ranked: Sequence[str],
    spec: PortfolioSpec,
    entry: Optional[_dt.date] = None,
    exit: Optional[_dt.date] = None,
) -> List[Holding]:
    """Equal-weight holdings of the top of ``ranked`` (best first)."""
    if not ranked:
        raise ConfigError("cannot select from an empty ranking")
    chosen = list(ranked[: spec.selection_size(len(ranked))])
    weight = 1.0 / len(chosen)
    return [Holding(name, weight, entry, exit) for name in chosen]


def check_coverage(
    rankings: Mapping[_dt.date, Sequence[str]], calendar: RebalanceCalendar, end: _dt.date
) -> None:
    """Every rebalance date before ``end`` needs a ranking."""
    missing = [t for t in calendar if t < end and t not in rankings]
    if missing:
        raise CoverageGapError(missing)


def _period_values(
    closes: pd.DataFrame, weights: np.ndarray, start_value: float, drift: bool
) -> np.ndarray:
    prices = closes.to_numpy(dtype=np.float64)
    if drift:
        relative = prices / prices[0]
        return start_value * (relative @ weights)
    daily = prices[1:] / prices[:-1] - 1.0
    growth = np.concatenate([[1.0], np.cumprod(1.0 + daily @ weights)])
    return start_value * growth


def run_backtest(
    rankings: Mapping[_dt.date, Sequence[str]],
    spec: PortfolioSpec,
    store: PitStore,
    end: _dt.date,
    calendar: Optional[RebalanceCalendar] = None,
    start: Optional[_dt.date] = None,
    drift: bool = True,
    cost_per_turnover: float = 0.0,
) -> BacktestReport:
    """Daily value series and metrics of ``spec`` traded on ``rankings``.

    :param rankings: instrument names per rebalance date, best first.
    :param spec: selection size.
    :param store: source of daily closes.
    :param end: last day of the final holding period.
    :param calendar: when given, every date of it before ``end`` must
      have a ranking.
    :param start: ignore rankings dated before this day.
    :param drift: ``True`` holds positions for the whole period;
      ``False`` resets to equal weights every day.
    :param cost_per_turnover: fraction of value paid per unit of
      turnover (sum of absolute weight changes) at each rebalance.
    """
    if calendar is not None:
        check_coverage(rankings, calendar, end)
    dates = sorted(t for t in rankings if t < end and (start is None or t >= start))
    if not dates:
        raise ConfigError(f"no rankings before {end} to backtest {spec.label}")

    value = 1.0
    series: Dict[_dt.date, float] = {dates[0]: value}
    holdings: List[Holding] = []
    turnover: Dict[_dt.date, float] = {}
    previous: Dict[str, float] = {}

    for i, t in enumerate(dates):
        t_next = dates[i + 1] if i + 1 < len(dates) else end
        days = store.calendar.business_days(t, t_next)
        if days[0] != t:
            days.insert(0, t)
        ranked = list(rankings[t])
        if not ranked:
            logger.warning("%s: nothing ranked at %s, holding cash", spec.label, t)
            for day in days[1:]:
                series[day] = value
            previous = {}
            continue

        selected = select_portfolio(ranked, spec, t, t_next)
        tradable = [
            h.instrument
            for h in selected
            if store.close_asof(h.instrument, t, DEFAULT_PRICE_LAG) is not None
        ]
        dropped = len(selected) - len(tradable)
        if dropped:
            logger.warning(
                "%s: %d selected instruments have no entry price at %s; weight redistributed",
                spec.label,
                dropped,
                t,
            )
        if not tradable:
            logger.warning("%s: no tradable selection at %s, holding cash", spec.label, t)
            for day in days[1:]:
                series[day] = value
            previous = {}
            continue
        weight = 1.0 / len(tradable)
        weights = np.full(len(tradable), weight)

        if cost_per_turnover:
            names = set(tradable) | set(previous)
            traded = sum(
                abs((weight if n in tradable else 0.0) - previous.get(n, 0.0)) for n in names
            )
            turnover[t] = traded
            value *= 1.0 - cost_per_turnover * traded
            # the first value stays 1.0; the entry cost shows from the next day on
            if i > 0:
                series[t] = value

        holdings.extend(Holding(n, weight, t, t_next) for n in tradable)
        closes = store.close_frame(tradable, days)
        path = _period_values(closes, weights, value, drift)
        for day, v in zip(days[1:], path[1:]):
            series[day] = float(v)
        value = float(path[-1])

        final = closes.iloc[-1].to_numpy() / closes.iloc[0].to_numpy() * weights
        previous = dict(zip(tradable, final / final.sum())) if drift else dict(zip(tradable, weights))

    values = pd.Series(series, dtype=np.float64)
    values.index = pd.DatetimeIndex(pd.to_datetime(list(series.keys())))
    values = values.sort_index()
    report = BacktestReport.from_values(spec, values, holdings, turnover)
    logger.info(
        "%s: return %.2f%%, volatility %.2f%%, Sharpe %.2f",
        spec.label,
        report.annual_return,
        report.volatility,
        report.sharpe,
    )
    return report

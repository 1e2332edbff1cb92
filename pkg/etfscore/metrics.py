"""Performance metrics of a daily portfolio value series.

Conventions: 252 trading days per year, geometric annual return,
sample (n - 1) standard deviation of daily simple returns, zero
risk-free rate.  Returns and volatilities are in percent.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, NumericError, UndefinedSharpeError

TRADING_DAYS = 252


def _checked(series: pd.Series) -> pd.Series:
    values = pd.Series(series, dtype=np.float64)
    if not np.all(np.isfinite(values.to_numpy())):
        raise NumericError("value series contains non-finite entries")
    if (values <= 0).any():
        raise NumericError("value series must be positive")
    return values


def daily_returns(series: pd.Series) -> pd.Series:
    values = _checked(series)
    return (values / values.shift(1) - 1.0).iloc[1:]


def total_return(series: pd.Series) -> float:
    values = _checked(series)
    if len(values) < 2:
        raise InsufficientDataError("total return needs at least 2 values")
    return (values.iloc[-1] / values.iloc[0] - 1.0) * 100.0


def annualized_return(series: pd.Series) -> float:
    """``(V_end / V_start) ** (252 / n) - 1`` in percent, ``n`` = number of daily steps."""
    values = _checked(series)
    if len(values) < 2:
        raise InsufficientDataError("annualized return needs at least 2 values")
    steps = len(values) - 1
    growth = values.iloc[-1] / values.iloc[0]
    return (growth ** (TRADING_DAYS / steps) - 1.0) * 100.0


def annualized_volatility(series: pd.Series) -> float:
    values = _checked(series)
    if len(values) < 3:
        raise InsufficientDataError("annualized volatility needs at least 3 values")
    return float(daily_returns(values).std(ddof=1)) * math.sqrt(TRADING_DAYS) * 100.0


def sharpe(series: pd.Series) -> float:
    """Annualized return over annualized volatility."""
    vol = annualized_volatility(series)
    if vol < 1e-12:
        raise UndefinedSharpeError("Sharpe ratio is undefined for a zero-volatility series")
    return annualized_return(series) / vol


def summarize(series: pd.Series) -> dict:
    """``annual_return``, ``volatility`` and ``sharpe`` of one series.

    Sharpe is NaN for a flat series instead of raising.
    """
    vol = annualized_volatility(series)
    ret = annualized_return(series)
    return {
        "annual_return": ret,
        "volatility": vol,
        "sharpe": ret / vol if vol >= 1e-12 else float("nan"),
    }


def annual_breakdown(series: pd.Series) -> pd.DataFrame:
    """Return and annualized volatility per calendar year.

    Each year is measured from the previous year's last value, so the
    yearly returns chain to the total return.  The first year starts
    at the first value and covers only the part of the year in the
    series.  Volatility uses the daily returns dated in that year and
    is NaN when there are fewer than two.
    """
    values = _checked(series)
    if len(values) < 2:
        raise InsufficientDataError("annual breakdown needs at least 2 values")
    values.index = pd.DatetimeIndex(values.index)
    returns = daily_returns(values)
    rows = []
    base = values.iloc[0]
    for year, chunk in values.groupby(values.index.year, sort=True):
        year_returns = returns[returns.index.year == year]
        end = chunk.iloc[-1]
        vol = (
            float(year_returns.std(ddof=1)) * math.sqrt(TRADING_DAYS) * 100.0
            if len(year_returns) >= 2
            else float("nan")
        )
        rows.append(
            {
                "year": int(year),
                "start": chunk.index[0].date(),
                "end": chunk.index[-1].date(),
                "return": (end / base - 1.0) * 100.0,
                "volatility": vol,
            }
        )
        base = end
    return pd.DataFrame(rows, columns=["year", "start", "end", "return", "volatility"])

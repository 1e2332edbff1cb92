"""Business-day arithmetic and the quarterly rebalance calendar.

A :class:`BusinessCalendar` is weekends plus a holiday set.  When no
holiday file is configured the US federal holidays from pandas'
``USFederalHolidayCalendar`` are used, since the engine assumes US
listings.  All day arithmetic goes through numpy's ``busday``
functions so that the store, the feature pipeline and the backtest
agree on what a business day is.
"""

from __future__ import annotations

import bisect
import calendar as _calendar
import datetime as _dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from pandas.tseries.holiday import USFederalHolidayCalendar

from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)

QUARTER_END_MONTHS = (3, 6, 9, 12)

_DEFAULT_HOLIDAY_RANGE = ("1990-01-01", "2060-12-31")


def to_date(value: object) -> _dt.date:
    """Coerce a string, ``datetime`` or numpy/pandas timestamp to a date."""
    if isinstance(value, _dt.date) and not isinstance(value, _dt.datetime):
        return value
    return pd.Timestamp(value).date()


class BusinessCalendar:
    """Weekends plus a fixed set of holidays."""

    def __init__(self, holidays: Optional[Iterable[object]] = None) -> None:
        if holidays is None:
            holidays = USFederalHolidayCalendar().holidays(*_DEFAULT_HOLIDAY_RANGE)
        days = sorted({to_date(h) for h in holidays})
        self.holidays: Tuple[_dt.date, ...] = tuple(days)
        self._busdaycal = np.busdaycalendar(
            weekmask="1111100",
            holidays=np.array(days, dtype="datetime64[D]"),
        )

    @classmethod
    def from_file(cls, path: Optional[Path]) -> "BusinessCalendar":
        """Load holidays from a CSV with a ``date`` column.

        ``None`` selects the default US federal calendar.
        """
        if path is None:
            return cls()
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        if "date" not in frame.columns:
            raise SchemaError(f"{path}: holiday file needs a 'date' column")
        dates = [d for d in frame["date"].str.strip() if d]
        logger.debug("loaded %d holidays from %s", len(dates), path)
        return cls(dates)

    def is_business_day(self, day: _dt.date) -> bool:
        return bool(np.is_busday(np.datetime64(day, "D"), busdaycal=self._busdaycal))

    def roll_backward(self, day: _dt.date) -> _dt.date:
        """Return ``day`` if it is a business day, else the previous one."""
        rolled = np.busday_offset(
            np.datetime64(day, "D"), 0, roll="backward", busdaycal=self._busdaycal
        )
        return rolled.item()

    def shift(self, day: _dt.date, n: int) -> _dt.date:
        """Move ``n`` business days from ``day`` (rolled backward first)."""
        moved = np.busday_offset(
            np.datetime64(day, "D"), n, roll="backward", busdaycal=self._busdaycal
        )
        return moved.item()

    def business_days(self, start: _dt.date, end: _dt.date) -> List[_dt.date]:
        """All business days in ``[start, end]``."""
        if end < start:
            return []
        days = np.arange(
            np.datetime64(start, "D"),
            np.datetime64(end, "D") + np.timedelta64(1, "D"),
        )
        mask = np.is_busday(days, busdaycal=self._busdaycal)
        return [d.item() for d in days[mask]]

    def last_business_day_of_month(self, year: int, month: int) -> _dt.date:
        last = _calendar.monthrange(year, month)[1]
        return self.roll_backward(_dt.date(year, month, last))


def quarter_of(day: _dt.date) -> int:
    """Calendar quarter (1-4) containing ``day``."""
    return (day.month - 1) // 3 + 1


def following_quarter_end_month(day: _dt.date) -> Tuple[int, int]:
    """(year, month) of the last month of the quarter after ``day``'s quarter."""
    q = quarter_of(day)
    if q == 4:
        return day.year + 1, 3
    return day.year, 3 * (q + 1)


def derive_available_from(period_end: _dt.date, cal: BusinessCalendar) -> _dt.date:
    """Default release date of a statement with the given fiscal period end.

    A statement becomes usable on the last business day of the calendar
    quarter following the quarter that contains ``period_end``, so a
    first-quarter statement is not used before the end of June.
    """
    year, month = following_quarter_end_month(period_end)
    return cal.last_business_day_of_month(year, month)


@dataclass(frozen=True)
class RebalanceCalendar:
    """Strictly increasing quarter-end rebalance dates."""

    dates: Tuple[_dt.date, ...]

    def __post_init__(self) -> None:
        for prev, curr in zip(self.dates, self.dates[1:]):
            if curr <= prev:
                raise ConfigError(
                    f"rebalance dates must be strictly increasing: {prev} then {curr}"
                )

    def __iter__(self) -> Iterator[_dt.date]:
        return iter(self.dates)

    def __len__(self) -> int:
        return len(self.dates)

    def __contains__(self, day: object) -> bool:
        return day in self.dates

    def validate(self, cal: BusinessCalendar) -> None:
        """Check every date is the last business day of a quarter-end month."""
        for day in self.dates:
            if day.month not in QUARTER_END_MONTHS:
                raise ConfigError(f"{day} is not in a quarter-end month")
            if day != cal.last_business_day_of_month(day.year, day.month):
                raise ConfigError(f"{day} is not the last business day of its month")

    def between(
        self, lo: Optional[_dt.date] = None, hi: Optional[_dt.date] = None
    ) -> "RebalanceCalendar":
        """Dates in the half-open range ``[lo, hi)``; ``None`` leaves a side open."""
        return RebalanceCalendar(
            tuple(
                d
                for d in self.dates
                if (lo is None or d >= lo) and (hi is None or d < hi)
            )
        )

    def next_after(self, day: _dt.date) -> Optional[_dt.date]:
        idx = bisect.bisect_right(self.dates, day)
        return self.dates[idx] if idx < len(self.dates) else None

    def previous_before(self, day: _dt.date) -> Optional[_dt.date]:
        idx = bisect.bisect_left(self.dates, day)
        return self.dates[idx - 1] if idx > 0 else None


def quarter_rebalance_dates(
    cal: BusinessCalendar, start: _dt.date, end: _dt.date
) -> RebalanceCalendar:
    """Last business days of March, June, September and December in ``[start, end]``."""
    dates = []
    for year in range(start.year, end.year + 1):
        for month in QUARTER_END_MONTHS:
            day = cal.last_business_day_of_month(year, month)
            if start <= day <= end:
                dates.append(day)
    return RebalanceCalendar(tuple(dates))

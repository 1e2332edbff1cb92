"""Percent-change feature windows and median-neutralized labels.

A sample is one stock at one rebalance date ``t``.  Its input is an
8 x f matrix of quarter-over-quarter percent changes built from the
nine most recent statements released on or before ``t``; its label is
``up`` when the stock's return from ``t`` to the next rebalance date is
in the top half of that date's cross-section and ``down`` otherwise.

Cells that cannot be computed (missing raw value, near-zero
denominator) are imputed to 0.0, and changes beyond ``clip_bound`` are
clamped.  Either way the cell is flagged in the window's mask.  The
mask is for filtering and audits only and never reaches the network.
"""

from __future__ import annotations

import datetime as _dt
import enum
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .busdays import RebalanceCalendar
from .errors import ConfigError, DataError, DegenerateCrossSectionError, MissingDataError
from .store import FEATURE_COLUMNS, PitStore

logger = logging.getLogger(__name__)

WINDOW_QUARTERS = 8
FLOOR_SCALE = 1e-6
DEFAULT_CLIP_BOUND = 10.0
DEFAULT_MAX_IMPUTED_FRAC = 0.25


class Label(enum.IntEnum):
    """Class index in the network's softmax output."""

    UP = 0
    DOWN = 1

    @property
    def text(self) -> str:
        return self.name.lower()


class RejectReason(str, enum.Enum):
    INSUFFICIENT_HISTORY = "insufficient-history"
    TOO_SPARSE = "too-sparse"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class DateSplits:
    """Boundaries of the train / validation / test ranges.

    Train covers ``[train_start, validation_start)``, validation
    ``[validation_start, test_start)`` and test ``[test_start, test_end]``.
    """

    train_start: _dt.date
    validation_start: _dt.date
    test_start: _dt.date
    test_end: _dt.date

    def __post_init__(self) -> None:
        ordered = (self.train_start, self.validation_start, self.test_start, self.test_end)
        if list(ordered) != sorted(ordered) or len(set(ordered)) != len(ordered):
            raise ConfigError(
                "splits must satisfy train_start < validation_start < test_start < test_end"
            )

    def bounds(self, split: Split) -> Tuple[_dt.date, _dt.date]:
        """Half-open ``[lo, hi)`` range of rebalance dates for ``split``."""
        split = Split(split)
        if split is Split.TRAIN:
            return self.train_start, self.validation_start
        if split is Split.VALIDATION:
            return self.validation_start, self.test_start
        return self.test_start, self.test_end + _dt.timedelta(days=1)


@dataclass(frozen=True)
class FeatureWindow:
    ticker: str
    asof: _dt.date
    values: np.ndarray  # (8, f), oldest quarter first
    mask: np.ndarray  # (8, f) booleans, True where the cell was imputed or clamped

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def imputed_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class WindowRejection:
    ticker: str
    asof: _dt.date
    reason: RejectReason


@dataclass(frozen=True)
class LabeledSample:
    window: FeatureWindow
    label: Label
    fwd_return: float


def pct_change(
    r_curr: float,
    r_prev: float,
    eps_den: float = 0.0,
    clip_bound: float = DEFAULT_CLIP_BOUND,
) -> Tuple[float, bool]:
    """Percent change ``(r_curr - r_prev) / r_prev`` and whether it was masked.

    A denominator smaller in magnitude than ``eps_den`` (or exactly zero)
    yields 0.0; a result outside ``[-clip_bound, clip_bound]`` is clamped.
    Both cases come back masked.
    """
    if math.isnan(r_curr) or math.isnan(r_prev):
        return 0.0, True
    if r_prev == 0.0 or abs(r_prev) < eps_den:
        return 0.0, True
    value = (r_curr - r_prev) / r_prev
    if value > clip_bound:
        return clip_bound, True
    if value < -clip_bound:
        return -clip_bound, True
    return value, False


def pct_change_matrix(
    raw: np.ndarray, floors: np.ndarray, clip_bound: float = DEFAULT_CLIP_BOUND
) -> Tuple[np.ndarray, np.ndarray]:
    """Row-to-row percent changes of ``raw`` (n+1 x f) with the same rules as :func:`pct_change`."""
    prev, curr = raw[:-1], raw[1:]
    missing = np.isnan(prev) | np.isnan(curr)
    degenerate = ~missing & ((prev == 0.0) | (np.abs(prev) < floors))
    ok = ~(missing | degenerate)
    values = np.zeros(prev.shape, dtype=np.float64)
    values[ok] = (curr[ok] - prev[ok]) / prev[ok]
    clipped = ok & (np.abs(values) > clip_bound)
    values = np.clip(values, -clip_bound, clip_bound)
    return values, missing | degenerate | clipped


def neutralize_labels(samples: Sequence[Tuple[str, float]]) -> List[Label]:
    """Median split of one date's cross-section of forward returns.

    The top ``ceil(n/2)`` returns are ``up``; equal returns are ordered
    by ticker.  Labels come back in input order.
    """
    n = len(samples)
    if n < 2:
        raise DegenerateCrossSectionError(f"need at least 2 samples to neutralize labels, got {n}")
    for ticker, ret in samples:
        if not math.isfinite(ret):
            raise DegenerateCrossSectionError(f"forward return of {ticker} is not finite")
    order = sorted(range(n), key=lambda i: (-samples[i][1], samples[i][0], i))
    n_up = (n + 1) // 2
    labels = [Label.DOWN] * n
    for rank, idx in enumerate(order):
        if rank < n_up:
            labels[idx] = Label.UP
    return labels


def liquidity_window(asof: _dt.date) -> _dt.date:
    """Start of the three-month window that ends at ``asof``."""
    return (pd.Timestamp(asof) - pd.DateOffset(months=3)).date()


def denominator_floors(
    store: PitStore,
    universe: Iterable[str],
    features: Sequence[str],
    cutoff: _dt.date,
) -> np.ndarray:
    """Per-feature ``eps_den``: FLOOR_SCALE times the median absolute value.

    Only statements released before ``cutoff`` (the end of the training
    range) contribute.  A feature with no observations gets a floor of 0.
    """
    columns: List[List[float]] = [[] for _ in features]
    for ticker in universe:
        for record in store.statements(ticker):
            if record.available_from >= cutoff:
                continue
            for j, name in enumerate(features):
                value = record.features[name]
                if not math.isnan(value):
                    columns[j].append(abs(value))
    floors = np.array(
        [FLOOR_SCALE * float(np.median(col)) if col else 0.0 for col in columns],
        dtype=np.float64,
    )
    logger.debug("denominator floors: %s", floors)
    return floors


class FeaturePipeline:
    """Builds windows and labeled datasets from a :class:`PitStore`."""

    def __init__(
        self,
        store: PitStore,
        features: Sequence[str] = FEATURE_COLUMNS,
        floors: Optional[np.ndarray] = None,
        clip_bound: float = DEFAULT_CLIP_BOUND,
        max_imputed_frac: float = DEFAULT_MAX_IMPUTED_FRAC,
        max_inactive_days: int = 5,
    ) -> None:
        unknown = [f for f in features if f not in FEATURE_COLUMNS]
        if unknown:
            raise ConfigError(f"unknown features: {', '.join(unknown)}")
        self.store = store
        self.features: Tuple[str, ...] = tuple(features)
        self.floors = (
            np.zeros(len(self.features)) if floors is None else np.asarray(floors, dtype=np.float64)
        )
        if self.floors.shape != (len(self.features),):
            raise ConfigError(
                f"expected {len(self.features)} denominator floors, got {self.floors.shape}"
            )
        self.clip_bound = clip_bound
        self.max_imputed_frac = max_imputed_frac
        self.max_inactive_days = max_inactive_days

    @property
    def n_features(self) -> int:
        return len(self.features)

    def is_valid(self, ticker: str, asof: _dt.date) -> bool:
        return self.store.is_valid_stock(
            ticker, liquidity_window(asof), asof, self.max_inactive_days
        )

    def build_window(self, ticker: str, asof: _dt.date) -> Union[FeatureWindow, WindowRejection]:
        """Eight rows of percent changes from the nine latest released statements."""
        records = self.store.statements_asof(ticker, asof, WINDOW_QUARTERS + 1)
        if len(records) < WINDOW_QUARTERS + 1:
            return WindowRejection(ticker, asof, RejectReason.INSUFFICIENT_HISTORY)
        raw = np.array(
            [[r.features[name] for name in self.features] for r in records], dtype=np.float64
        )
        values, mask = pct_change_matrix(raw, self.floors, self.clip_bound)
        if mask.mean() > self.max_imputed_frac:
            return WindowRejection(ticker, asof, RejectReason.TOO_SPARSE)
        return FeatureWindow(ticker, asof, values, mask)

    def cross_section(
        self, universe: Iterable[str], asof: _dt.date, t_next: _dt.date
    ) -> List[LabeledSample]:
        """Labeled samples of every usable stock at one rebalance date."""
        windows: List[FeatureWindow] = []
        returns: List[float] = []
        rejected = {reason: 0 for reason in RejectReason}
        for ticker in sorted(set(universe)):
            if not self.is_valid(ticker, asof):
                continue
            window = self.build_window(ticker, asof)
            if isinstance(window, WindowRejection):
                rejected[window.reason] += 1
                continue
            try:
                fwd = self.store.forward_return(ticker, asof, t_next)
            except MissingDataError as exc:
                logger.debug("skipping %s at %s: %s", ticker, asof, exc)
                continue
            windows.append(window)
            returns.append(fwd)
        logger.debug(
            "%s: %d samples, rejected %s",
            asof,
            len(windows),
            {r.value: c for r, c in rejected.items() if c},
        )
        if len(windows) < 2:
            logger.warning("%s: cross-section of %d samples skipped", asof, len(windows))
            return []
        labels = neutralize_labels([(w.ticker, r) for w, r in zip(windows, returns)])
        return [LabeledSample(w, lab, r) for w, lab, r in zip(windows, labels, returns)]

    def build_dataset(
        self, calendar: RebalanceCalendar, universe: Sequence[str], split: Split, splits: DateSplits
    ) -> List[LabeledSample]:
        """Samples for every rebalance date of ``split`` that has a following date."""
        lo, hi = splits.bounds(split)
        samples: List[LabeledSample] = []
        for asof in calendar.between(lo, hi):
            t_next = calendar.next_after(asof)
            if t_next is None:
                logger.info("%s: no next rebalance date, no label", asof)
                continue
            samples.extend(self.cross_section(universe, asof, t_next))
        if not samples:
            raise ConfigError(
                f"no {Split(split).value} samples between {lo} and {hi}; "
                "check the split dates against the universe and data"
            )
        logger.info("%s dataset: %d samples", Split(split).value, len(samples))
        return samples


def to_arrays(samples: Sequence[LabeledSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack samples into an (n, 8f) input matrix and an (n,) class vector."""
    if not samples:
        raise DataError("no samples to stack")
    X = np.stack([s.window.flatten() for s in samples]).astype(np.float64)
    y = np.array([int(s.label) for s in samples], dtype=np.int64)
    return X, y


def export_dataset(samples: Sequence[LabeledSample], path: Path) -> Path:
    """Write the dataset and its ``*_mask.csv`` companion; returns the mask path."""
    path = Path(path)
    if not samples:
        raise DataError("no samples to export")
    rows, f = samples[0].window.values.shape
    value_cols = [f"v_{q}_{i}" for q in range(rows) for i in range(f)]
    mask_cols = [f"m_{q}_{i}" for q in range(rows) for i in range(f)]
    keys = pd.DataFrame(
        {
            "ticker": [s.window.ticker for s in samples],
            "asof": [s.window.asof.isoformat() for s in samples],
        }
    )
    data = pd.concat(
        [
            keys,
            pd.DataFrame(
                {
                    "label": [s.label.text for s in samples],
                    "fwd_return": [s.fwd_return for s in samples],
                }
            ),
            pd.DataFrame(np.stack([s.window.flatten() for s in samples]), columns=value_cols),
        ],
        axis=1,
    )
    masks = pd.concat(
        [
            keys,
            pd.DataFrame(
                np.stack([s.window.mask.reshape(-1) for s in samples]).astype(np.int8),
                columns=mask_cols,
            ),
        ],
        axis=1,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(path, index=False, float_format="%.17g")
    mask_path = path.with_name(f"{path.stem}_mask{path.suffix}")
    masks.to_csv(mask_path, index=False)
    return mask_path

"""Stock scores from the trained network and ETF scores from PDF weights.

A stock's score is the network's up-probability for its feature
window at a rebalance date.  An ETF's score is the weight-averaged
score of its components, renormalized over the components that could
be scored::

    S = sum(w_c * s_c for covered c) / sum(w_c for covered c)

An ETF whose covered weight is below ``min_coverage`` of its equity
weight is excluded at that date rather than scored.
"""

from __future__ import annotations

import datetime as _dt
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, MissingDataError
from .features import DEFAULT_CLIP_BOUND, DEFAULT_MAX_IMPUTED_FRAC, FeaturePipeline, FeatureWindow
from .network import ModelParams, predict
from .store import EtfListing, PitStore
from .training import Checkpoint
from .validator import validate_scoring

logger = logging.getLogger(__name__)

MIN_COVERAGE = 0.8
STALE_PDF_DAYS = 95


class ExclusionReason(str, enum.Enum):
    NOT_LISTED = "not-listed"
    MISSING_PDF = "missing-pdf"
    STALE_PDF = "stale-pdf"
    LOW_COVERAGE = "low-coverage"


@dataclass(frozen=True)
class StockScore:
    ticker: str
    asof: _dt.date
    score: Optional[float]
    covered: bool


@dataclass(frozen=True)
class EtfScore:
    etf: str
    asof: _dt.date
    score: float
    coverage: float
    n_components: int


@dataclass(frozen=True)
class EtfExclusion:
    etf: str
    asof: _dt.date
    reason: ExclusionReason
    detail: str = ""


@dataclass
class Ranking:
    """Scored ETFs at one date, best first, plus the ETFs left out."""

    asof: _dt.date
    scores: List[EtfScore] = field(default_factory=list)
    exclusions: List[EtfExclusion] = field(default_factory=list)

    @property
    def instruments(self) -> List[str]:
        return [s.etf for s in self.scores]


def aggregate(
    weights: Sequence[float], scores: Sequence[float], covered: Sequence[bool]
) -> Tuple[float, float]:
    """Renormalized weighted score and covered weight fraction.

    :returns: ``(score, coverage)``; score is NaN when nothing is covered.
    """
    w = np.asarray(weights, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(covered, dtype=bool)
    if not (w.shape == s.shape == c.shape):
        raise DataError("weights, scores and coverage flags differ in length")
    if np.any(w < 0):
        raise DataError("negative component weight")
    total = w.sum()
    covered_weight = w[c].sum()
    if total <= 0 or covered_weight <= 0:
        return float("nan"), 0.0
    return float(np.dot(w[c], s[c]) / covered_weight), float(covered_weight / total)


def _sort_key_score(score: float, name: str) -> Tuple[float, str]:
    return (-score, name)


class Scorer:
    """Scores stocks and ETFs with one set of trained parameters."""

    def __init__(
        self,
        params: ModelParams,
        pipeline: FeaturePipeline,
        min_coverage: float = MIN_COVERAGE,
        stale_pdf_days: int = STALE_PDF_DAYS,
    ) -> None:
        ok, reason = validate_scoring(min_coverage, stale_pdf_days)
        if not ok:
            raise ConfigError(reason)
        if pipeline.n_features != params.n_features:
            raise ConfigError(
                f"model expects {params.n_features} features, pipeline builds {pipeline.n_features}"
            )
        self.params = params
        self.pipeline = pipeline
        self.min_coverage = min_coverage
        self.stale_pdf_days = stale_pdf_days
        self._cache: Dict[Tuple[str, _dt.date], StockScore] = {}

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        store: PitStore,
        clip_bound: float = DEFAULT_CLIP_BOUND,
        max_imputed_frac: float = DEFAULT_MAX_IMPUTED_FRAC,
        max_inactive_days: int = 5,
        min_coverage: float = MIN_COVERAGE,
        stale_pdf_days: int = STALE_PDF_DAYS,
    ) -> "Scorer":
        pipeline = FeaturePipeline(
            store,
            checkpoint.features,
            floors=checkpoint.floors,
            clip_bound=clip_bound,
            max_imputed_frac=max_imputed_frac,
            max_inactive_days=max_inactive_days,
        )
        return cls(checkpoint.params, pipeline, min_coverage, stale_pdf_days)

    @property
    def store(self) -> PitStore:
        return self.pipeline.store

    def score_stock(self, ticker: str, asof: _dt.date) -> StockScore:
        """Up-probability of ``ticker`` at ``asof``, or an uncovered record."""
        key = (ticker, asof)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        result = StockScore(ticker, asof, None, False)
        if self.pipeline.is_valid(ticker, asof):
            window = self.pipeline.build_window(ticker, asof)
            if isinstance(window, FeatureWindow):
                probs = predict(self.params, window)
                result = StockScore(ticker, asof, float(probs[0]), True)
        self._cache[key] = result
        return result

    def rank_stocks(self, universe: Iterable[str], asof: _dt.date) -> List[StockScore]:
        """Covered stocks at ``asof``, best score first, ties by ticker."""
        scored = [self.score_stock(t, asof) for t in sorted(set(universe))]
        covered = [s for s in scored if s.covered]
        covered.sort(key=lambda s: _sort_key_score(s.score, s.ticker))
        logger.debug("%s: %d of %d stocks covered", asof, len(covered), len(scored))
        return covered

    def score_etf(self, etf: str, asof: _dt.date) -> Union[EtfScore, EtfExclusion]:
        """Score one ETF from its latest PDF; a missing PDF raises."""
        snapshot = self.store.pdf_asof(etf, asof)
        age = (asof - snapshot.date).days
        if age > self.stale_pdf_days:
            return EtfExclusion(
                etf, asof, ExclusionReason.STALE_PDF, f"latest PDF is {age} days old"
            )
        tickers = [t for t, _ in snapshot.holdings]
        weights = [w for _, w in snapshot.holdings]
        stock_scores = [self.score_stock(t, asof) for t in tickers]
        score, coverage = aggregate(
            weights,
            [s.score if s.covered else np.nan for s in stock_scores],
            [s.covered for s in stock_scores],
        )
        if coverage < self.min_coverage:
            return EtfExclusion(
                etf, asof, ExclusionReason.LOW_COVERAGE, f"coverage {coverage:.4f}"
            )
        return EtfScore(etf, asof, score, coverage, len(tickers))

    def score_universe(self, listings: Sequence[EtfListing], asof: _dt.date) -> Ranking:
        """Score every ETF valid at ``asof`` and sort by score, ties by name."""
        ranking = Ranking(asof)
        for listing in sorted(listings, key=lambda l: l.etf):
            if listing.inception > asof:
                ranking.exclusions.append(
                    EtfExclusion(listing.etf, asof, ExclusionReason.NOT_LISTED)
                )
                continue
            try:
                result = self.score_etf(listing.etf, asof)
            except MissingDataError as exc:
                ranking.exclusions.append(
                    EtfExclusion(listing.etf, asof, ExclusionReason.MISSING_PDF, str(exc))
                )
                continue
            if isinstance(result, EtfExclusion):
                ranking.exclusions.append(result)
            else:
                ranking.scores.append(result)
        ranking.scores.sort(key=lambda s: _sort_key_score(s.score, s.etf))
        if not ranking.scores:
            logger.warning("%s: no ETF could be scored", asof)
        for exclusion in ranking.exclusions:
            logger.debug("%s excluded at %s: %s", exclusion.etf, asof, exclusion.reason.value)
        return ranking


def write_etf_scores(rankings: Iterable[Ranking], path: Path) -> Path:
    """``asof,etf,score,coverage,n_components``, one row per scored ETF."""
    rows = [
        {
            "asof": r.asof.isoformat(),
            "etf": s.etf,
            "score": s.score,
            "coverage": s.coverage,
            "n_components": s.n_components,
        }
        for r in rankings
        for s in r.scores
    ]
    frame = pd.DataFrame(rows, columns=["asof", "etf", "score", "coverage", "n_components"])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return Path(path)


def write_exclusions(rankings: Iterable[Ranking], path: Path) -> Path:
    rows = [
        {"asof": r.asof.isoformat(), "etf": e.etf, "reason": e.reason.value, "detail": e.detail}
        for r in rankings
        for e in r.exclusions
    ]
    pd.DataFrame(rows, columns=["asof", "etf", "reason", "detail"]).to_csv(
        path, index=False, lineterminator="\n"
    )
    return Path(path)


def write_stock_scores(scores: Iterable[StockScore], path: Path) -> Path:
    """``asof,ticker,score,covered``; uncovered stocks have an empty score."""
    rows = [
        {
            "asof": s.asof.isoformat(),
            "ticker": s.ticker,
            "score": s.score if s.covered else np.nan,
            "covered": int(s.covered),
        }
        for s in scores
    ]
    frame = pd.DataFrame(rows, columns=["asof", "ticker", "score", "covered"])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return Path(path)


def read_rankings(path: Path) -> Dict[_dt.date, List[str]]:
    """Instrument order per date from an ETF or stock score file.

    Stock files contribute covered rows only.  Order is score
    descending, ties by instrument name, the same rule the scorer uses.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"score file not found: {path}")
    frame = pd.read_csv(path, dtype={"asof": str, "etf": str, "ticker": str})
    if "etf" in frame.columns:
        id_column = "etf"
    elif "ticker" in frame.columns:
        id_column = "ticker"
        frame = frame[frame["covered"] == 1]
    else:
        raise DataError(f"{path}: expected an etf or ticker column")
    rankings: Dict[_dt.date, List[str]] = {}
    for asof, group in frame.groupby("asof", sort=True):
        ordered = sorted(
            zip(group["score"].astype(float), group[id_column]),
            key=lambda pair: _sort_key_score(pair[0], pair[1]),
        )
        rankings[_dt.date.fromisoformat(asof)] = [name for _, name in ordered]
    return rankings

import datetime as _dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etfscore import scoring
from etfscore.errors import ConfigError, DataError
from etfscore.features import FeaturePipeline
from etfscore.network import init_params
from etfscore.scoring import (
    EtfScore,
    ExclusionReason,
    Scorer,
    aggregate,
    read_rankings,
    write_etf_scores,
    write_exclusions,
    write_stock_scores,
)
from etfscore.store import FEATURE_COLUMNS, load_etf_universe

T0 = _dt.date(2021, 12, 31)
T1 = _dt.date(2022, 3, 31)
STOCK_SCORES = {"A": 0.9, "B": 0.7, "C": 0.6, "D": 0.4, "E": 0.3, "F": 0.2}


@pytest.fixture
def scorer(store, monkeypatch):
    def fixed(params, window):
        s = STOCK_SCORES[window.ticker]
        return np.array([s, 1.0 - s])

    monkeypatch.setattr(scoring, "predict", fixed)
    return Scorer(init_params(len(FEATURE_COLUMNS), seed=0), FeaturePipeline(store))


def test_aggregate_renormalizes_over_covered_weight():
    score, coverage = aggregate([0.5, 0.3, 0.2], [0.8, 0.4, np.nan], [True, True, False])
    assert score == pytest.approx(0.65)
    assert coverage == pytest.approx(0.8)


def test_aggregate_with_nothing_covered():
    score, coverage = aggregate([0.5, 0.5], [np.nan, np.nan], [False, False])
    assert np.isnan(score) and coverage == 0.0


def test_aggregate_rejects_bad_inputs():
    with pytest.raises(DataError):
        aggregate([0.5, 0.5], [0.1], [True, True])
    with pytest.raises(DataError):
        aggregate([1.5, -0.5], [0.1, 0.2], [True, True])


@given(
    st.lists(
        st.tuples(
            st.floats(0.001, 1.0),
            st.floats(0.0, 1.0),
            st.booleans(),
        ),
        min_size=1,
        max_size=20,
    ).filter(lambda rows: any(c for _, _, c in rows))
)
def test_aggregate_is_a_convex_combination(rows):
    weights, scores, covered = zip(*rows)
    score, coverage = aggregate(weights, scores, covered)
    inside = [s for s, c in zip(scores, covered) if c]
    assert min(inside) - 1e-12 <= score <= max(inside) + 1e-12
    assert 0.0 < coverage <= 1.0 + 1e-12


def test_scorer_checks_its_settings(store):
    params = init_params(len(FEATURE_COLUMNS), seed=0)
    with pytest.raises(ConfigError):
        Scorer(params, FeaturePipeline(store), min_coverage=0.0)
    with pytest.raises(ConfigError):
        Scorer(params, FeaturePipeline(store, ["total_revenue"]))


def test_stock_scores(scorer):
    assert scorer.score_stock("A", T0).score == pytest.approx(0.9)
    illiquid = scorer.score_stock("F", T0)
    assert not illiquid.covered and illiquid.score is None
    assert scorer.score_stock("F", T1).covered
    ranked = scorer.rank_stocks(["F", "C", "A", "B", "E", "D"], T0)
    assert [s.ticker for s in ranked] == ["A", "B", "C", "D", "E"]


def test_score_universe_at_year_end(scorer, market):
    ranking = scorer.score_universe(load_etf_universe(market.etfs), T0)
    assert ranking.instruments == ["E1", "E2"]
    e1, e2 = ranking.scores
    assert e1.score == pytest.approx(0.8)
    assert e2.score == pytest.approx((0.6 * 0.6 + 0.39 * 0.4) / 0.99)
    assert e2.coverage == pytest.approx(1.0)
    assert e2.n_components == 2
    reasons = {e.etf: e.reason for e in ranking.exclusions}
    assert reasons == {
        "E3": ExclusionReason.STALE_PDF,
        "E4": ExclusionReason.LOW_COVERAGE,
        "E5": ExclusionReason.MISSING_PDF,
        "E6": ExclusionReason.NOT_LISTED,
    }


def test_score_universe_after_suspension(scorer, market):
    ranking = scorer.score_universe(load_etf_universe(market.etfs), T1)
    assert ranking.instruments == ["E1", "E2", "E4"]
    assert ranking.scores[-1].score == pytest.approx(0.9 * 0.2 + 0.1 * 0.9)
    reasons = {e.etf: e.reason for e in ranking.exclusions}
    assert reasons["E6"] is ExclusionReason.MISSING_PDF


def test_equal_scores_rank_by_name(tmp_path):
    ranking = scoring.Ranking(
        T0,
        [EtfScore("Z", T0, 0.5, 1.0, 1), EtfScore("Y", T0, 0.5, 1.0, 1), EtfScore("X", T0, 0.4, 1.0, 1)],
    )
    path = write_etf_scores([ranking], tmp_path / "etf_scores.csv")
    assert read_rankings(path) == {T0: ["Y", "Z", "X"]}


def test_score_files_round_trip_rankings(scorer, market, tmp_path):
    listings = load_etf_universe(market.etfs)
    rankings = [scorer.score_universe(listings, d) for d in (T0, T1)]
    etf_path = write_etf_scores(rankings, tmp_path / "etf_scores.csv")
    assert read_rankings(etf_path) == {T0: ["E1", "E2"], T1: ["E1", "E2", "E4"]}

    write_exclusions(rankings, tmp_path / "exclusions.csv")
    lines = (tmp_path / "exclusions.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "asof,etf,reason,detail"
    assert len(lines) == 1 + 4 + 3

    stocks = [scorer.score_stock(t, T0) for t in ("A", "F", "B")]
    stock_path = write_stock_scores(stocks, tmp_path / "stock_scores.csv")
    assert read_rankings(stock_path) == {T0: ["A", "B"]}


def test_read_rankings_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_rankings(tmp_path / "nothing.csv")
    odd = tmp_path / "odd.csv"
    odd.write_text("asof,name,score\n2022-03-31,X,0.5\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_rankings(odd)


def weighted_average_by_hand(weights, scores, covered):
    total = covered_weight = weighted = 0.0
    for weight, score, is_covered in zip(weights, scores, covered):
        total += weight
        if is_covered:
            covered_weight += weight
            weighted += weight * score
    return weighted / covered_weight, covered_weight / total


@settings(max_examples=1000)
@given(
    st.lists(
        st.tuples(
            st.one_of(st.just(0.0), st.floats(1e-6, 1.0)),
            st.floats(0.0, 1.0),
            st.booleans(),
        ),
        min_size=1,
        max_size=30,
    ).filter(lambda rows: any(w > 0 and c for w, _, c in rows))
)
def test_aggregate_matches_a_plain_weighted_average(rows):
    weights, scores, covered = zip(*rows)
    scores = [s if c else np.nan for s, c in zip(scores, covered)]
    score, coverage = aggregate(weights, scores, covered)
    expected_score, expected_coverage = weighted_average_by_hand(weights, scores, covered)
    assert score == pytest.approx(expected_score, abs=1e-12)
    assert coverage == pytest.approx(expected_coverage, abs=1e-12)


@pytest.mark.parametrize("order", [[5, 4, 3, 2, 1, 0], [2, 0, 5, 1, 4, 3], [3, 5, 0, 4, 2, 1]])
def test_listing_order_does_not_matter(scorer, market, order):
    listings = load_etf_universe(market.etfs)
    expected = scorer.score_universe(listings, T1)
    shuffled = scorer.score_universe([listings[i] for i in order], T1)
    assert shuffled.scores == expected.scores
    assert shuffled.exclusions == expected.exclusions

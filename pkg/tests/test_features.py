import datetime as _dt
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etfscore.busdays import quarter_rebalance_dates
from etfscore.errors import ConfigError, DegenerateCrossSectionError
from etfscore.features import (
    WINDOW_QUARTERS,
    DateSplits,
    FeaturePipeline,
    FeatureWindow,
    Label,
    RejectReason,
    Split,
    WindowRejection,
    denominator_floors,
    export_dataset,
    neutralize_labels,
    pct_change,
    pct_change_matrix,
    to_arrays,
)
from etfscore.store import FEATURE_COLUMNS

T0 = _dt.date(2021, 12, 31)
T1 = _dt.date(2022, 3, 31)
T2 = _dt.date(2022, 6, 30)


@pytest.mark.parametrize(
    "curr, prev, expected, masked",
    [
        (110.0, 100.0, 0.1, False),
        (100.0, 100.0, 0.0, False),
        (50.0, -50.0, -2.0, False),
        (1000.0, 1.0, 10.0, True),
        (-1000.0, 1.0, -10.0, True),
        (5.0, 0.0, 0.0, True),
        (math.nan, 1.0, 0.0, True),
        (1.0, math.nan, 0.0, True),
    ],
)
def test_pct_change(curr, prev, expected, masked):
    value, was_masked = pct_change(curr, prev)
    assert value == pytest.approx(expected)
    assert was_masked is masked


def test_pct_change_floor():
    assert pct_change(5.0, 1e-9, eps_den=1e-6) == (0.0, True)
    assert pct_change(5.0, -1e-9, eps_den=1e-6) == (0.0, True)
    value, masked = pct_change(2e-6, 1e-6, eps_den=1e-6)
    assert value == pytest.approx(1.0) and not masked


@given(
    st.lists(
        st.one_of(st.floats(-1e6, 1e6, allow_nan=False), st.just(math.nan)),
        min_size=18,
        max_size=18,
    )
)
def test_matrix_agrees_with_scalar_rule(cells):
    raw = np.array(cells).reshape(9, 2)
    floors = np.array([1e-3, 0.0])
    values, mask = pct_change_matrix(raw, floors)
    for q in range(8):
        for j in range(2):
            expected, masked = pct_change(raw[q + 1, j], raw[q, j], floors[j])
            assert values[q, j] == pytest.approx(expected)
            assert mask[q, j] == masked


def test_labels_split_at_the_median():
    labels = neutralize_labels([("A", 0.1), ("B", 0.4), ("C", 0.2), ("D", 0.3)])
    assert labels == [Label.DOWN, Label.UP, Label.DOWN, Label.UP]


def test_odd_cross_section_gives_the_extra_up_label():
    labels = neutralize_labels([("A", 0.1), ("B", 0.2), ("C", 0.3)])
    assert labels.count(Label.UP) == 2


def test_ties_break_by_ticker():
    assert neutralize_labels([("B", 0.1), ("A", 0.1)]) == [Label.DOWN, Label.UP]


def test_degenerate_cross_sections():
    with pytest.raises(DegenerateCrossSectionError):
        neutralize_labels([("A", 0.1)])
    with pytest.raises(DegenerateCrossSectionError):
        neutralize_labels([("A", 0.1), ("B", math.inf)])


@given(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=2, max_size=60))
def test_labels_are_balanced_and_monotone(returns):
    samples = [(f"T{i:03d}", r) for i, r in enumerate(returns)]
    labels = neutralize_labels(samples)
    assert labels.count(Label.UP) == math.ceil(len(returns) / 2)
    up = [r for r, lab in zip(returns, labels) if lab is Label.UP]
    down = [r for r, lab in zip(returns, labels) if lab is Label.DOWN]
    if down:
        assert min(up) >= max(down)


def test_window_values_follow_quarterly_growth(store):
    pipeline = FeaturePipeline(store)
    window = pipeline.build_window("B", T0)
    assert isinstance(window, FeatureWindow)
    assert window.values.shape == (WINDOW_QUARTERS, len(FEATURE_COLUMNS))
    np.testing.assert_allclose(window.values, 0.04, rtol=1e-9)
    assert window.imputed_fraction == 0.0
    assert window.flatten().shape == (WINDOW_QUARTERS * len(FEATURE_COLUMNS),)


def test_window_needs_nine_statements(store):
    pipeline = FeaturePipeline(store)
    # at 2020-12-31 only 2019Q1..2020Q3 (seven statements) are released
    rejection = pipeline.build_window("A", _dt.date(2020, 12, 31))
    assert isinstance(rejection, WindowRejection)
    assert rejection.reason is RejectReason.INSUFFICIENT_HISTORY


def test_sparse_window_is_rejected(tmp_path, calendar):
    from etfscore.store import PitStore

    header = "ticker,period_end,available_from," + ",".join(FEATURE_COLUMNS)
    lines = [header]
    for k in range(9):
        period_end = (pd.Timestamp("2019-03-31") + pd.offsets.QuarterEnd(k)).date()
        values = ["" if (k % 2 and j < 8) else "100" for j in range(len(FEATURE_COLUMNS))]
        lines.append(",".join(["X", period_end.isoformat(), ""] + values))
    path = tmp_path / "s.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    store = PitStore(calendar)
    store.ingest_statements(path)
    result = FeaturePipeline(store).build_window("X", _dt.date(2021, 6, 30))
    assert isinstance(result, WindowRejection)
    assert result.reason is RejectReason.TOO_SPARSE


def test_unknown_feature_name(store):
    with pytest.raises(ConfigError):
        FeaturePipeline(store, ["total_revenue", "ebitda"])


def test_denominator_floors_use_training_statements_only(store):
    floors = denominator_floors(store, ["A"], ["total_revenue"], _dt.date(2019, 7, 1))
    # only 2019Q1 (released 2019-06-28) is before the cutoff
    assert floors.tolist() == pytest.approx([1e-6 * 1000.0])
    empty = denominator_floors(store, ["A"], ["total_revenue"], _dt.date(2019, 1, 1))
    assert empty.tolist() == [0.0]


def test_cross_section_skips_illiquid_stocks(store):
    pipeline = FeaturePipeline(store)
    samples = pipeline.cross_section(["A", "B", "C", "D", "E", "F"], T0, T1)
    tickers = [s.window.ticker for s in samples]
    assert tickers == ["A", "B", "C", "D", "E"]
    up = {s.window.ticker for s in samples if s.label is Label.UP}
    assert up == {"A", "B", "C"}
    fwd = {s.window.ticker: s.fwd_return for s in samples}
    assert fwd["A"] == pytest.approx(store.forward_return("A", T0, T1))


def test_build_dataset_by_split(store, calendar):
    rebalance = quarter_rebalance_dates(calendar, T0, T2)
    splits = DateSplits(
        train_start=_dt.date(2021, 12, 1),
        validation_start=_dt.date(2022, 3, 1),
        test_start=_dt.date(2022, 4, 1),
        test_end=T2,
    )
    pipeline = FeaturePipeline(store)
    universe = ["A", "B", "C", "D", "E", "F"]
    train = pipeline.build_dataset(rebalance, universe, Split.TRAIN, splits)
    val = pipeline.build_dataset(rebalance, universe, Split.VALIDATION, splits)
    assert {s.window.asof for s in train} == {T0}
    assert {s.window.asof for s in val} == {T1}
    assert len(train) == 5 and len(val) == 6
    # the last test date has no following date, so no labels at all
    with pytest.raises(ConfigError):
        pipeline.build_dataset(rebalance, universe, Split.TEST, splits)

    X, y = to_arrays(train)
    assert X.shape == (5, WINDOW_QUARTERS * len(FEATURE_COLUMNS))
    assert list(y) == [0, 0, 0, 1, 1]


def test_splits_must_be_ordered():
    with pytest.raises(ConfigError):
        DateSplits(T1, T0, T2, _dt.date(2022, 9, 30))
    splits = DateSplits(T0, T1, T2, _dt.date(2022, 9, 30))
    assert splits.bounds(Split.TEST) == (T2, _dt.date(2022, 10, 1))


def test_export_dataset(store, tmp_path):
    samples = FeaturePipeline(store).cross_section(["A", "B", "C"], T0, T1)
    mask_path = export_dataset(samples, tmp_path / "train.csv")
    data = pd.read_csv(tmp_path / "train.csv")
    assert list(data.columns[:5]) == ["ticker", "asof", "label", "fwd_return", "v_0_0"]
    assert data.columns[-1] == f"v_7_{len(FEATURE_COLUMNS) - 1}"
    assert list(data["label"]) == ["up", "up", "down"]
    masks = pd.read_csv(mask_path)
    assert len(masks) == 3


def test_one_missing_value_masks_two_cells(market):
    from etfscore.store import PitStore

    column = FEATURE_COLUMNS[2]
    frame = pd.read_csv(market.statements, dtype=str, keep_default_na=False)
    frame.loc[(frame["ticker"] == "A") & (frame["period_end"] == "2020-12-31"), column] = ""
    path = market.directory / "gappy.csv"
    frame.to_csv(path, index=False)
    store = PitStore(market.calendar)
    store.ingest_statements(path)
    window = FeaturePipeline(store).build_window("A", T0)
    assert isinstance(window, FeatureWindow)
    # rows compare 2019Q3..2021Q3 pairwise; 2020Q4 feeds rows 4 and 5
    assert int(window.mask.sum()) == 2
    assert list(np.flatnonzero(window.mask[:, 2])) == [4, 5]
    assert (window.values[window.mask] == 0.0).all()
    np.testing.assert_allclose(window.values[~window.mask], 0.05, rtol=1e-9)

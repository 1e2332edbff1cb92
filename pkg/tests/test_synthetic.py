import pandas as pd
import pytest

from etfscore.busdays import BusinessCalendar
from etfscore.config import load_config, save_config
from etfscore.errors import ConfigError
from etfscore.features import WINDOW_QUARTERS
from etfscore.store import PitStore, load_etf_universe
from etfscore.synthetic import SyntheticSpec, generate, run_selftest, selftest_config

SMALL = SyntheticSpec(n_tickers=20, n_quarters=17, n_etfs=3, etf_size=5, n_suspensions=2)
WEEKENDS = BusinessCalendar([])


@pytest.fixture
def files(tmp_path):
    return generate(tmp_path / "inputs", SMALL, WEEKENDS)


@pytest.mark.parametrize(
    "overrides",
    [{"n_quarters": WINDOW_QUARTERS + 7}, {"n_tickers": 10}, {"etf_size": 300}],
)
def test_spec_limits(overrides):
    with pytest.raises(ConfigError):
        SyntheticSpec(**overrides)


def test_generated_files_ingest_cleanly(files):
    store = PitStore(WEEKENDS)
    store.ingest_statements(files.statements)
    store.ingest_prices(files.prices)
    store.ingest_pdfs(files.pdfs)
    assert store.summary()["statements"] == 20 * 17
    assert store.summary()["pdf_snapshots"] == 3 * 18
    listings = load_etf_universe(files.etfs)
    assert listings[-1].inception == files.rebalance_dates[-6]
    snapshot = store.pdf_asof("SYN00", files.rebalance_dates[-1])
    assert snapshot.residual == pytest.approx(SMALL.cash_weight)
    assert len(pd.read_csv(files.stocks)) == 20


def test_generation_is_deterministic(files, tmp_path):
    again = generate(tmp_path / "again", SMALL, WEEKENDS)
    for name in ("statements", "prices", "pdfs", "etfs", "index"):
        assert getattr(files, name).read_bytes() == getattr(again, name).read_bytes()


def test_selftest_config_loads(files, tmp_path):
    path = save_config(selftest_config(files, maxiter=200, seed=1), tmp_path / "config.yaml")
    config = load_config(path)
    assert config.paths.statements.resolve() == files.statements.resolve()
    assert config.paths.output.resolve() == tmp_path.resolve()
    assert config.splits.train_start == files.rebalance_dates[9]
    assert config.splits.test_end == files.rebalance_dates[-1]
    assert [e.name for e in config.experiments] == ["stocks", "synthetic_etfs"]
    assert config.train.evaluation_iterations() == list(range(110, 201, 10))


@pytest.mark.slow
def test_selftest_finds_the_planted_signal(tmp_path):
    result = run_selftest(tmp_path / "selftest")
    assert result.passed, result.failures
    assert result.oracle_accuracy >= 0.70
    assert (tmp_path / "selftest" / "reports" / "stocks" / "report.md").is_file()


@pytest.mark.slow
def test_selftest_output_is_reproducible(tmp_path):
    trees = []
    for name in ("first", "second"):
        root = tmp_path / name
        run_selftest(root, maxiter=400, seed=3)
        trees.append(
            {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
        )
    first, second = trees
    assert sorted(first) == sorted(second)
    for expected in ("model/checkpoint.npz", "model/training_log.csv", "scores/stock_scores.csv"):
        assert expected in first
    assert any(name.startswith("reports/") for name in first)
    for name in first:
        assert first[name] == second[name], name

"""Run configuration.

The configuration is one YAML file merged key by key over the bundled
``data/default_config.yaml``.  ``--set section.key=value`` overrides
are applied on top (values are parsed as YAML), and the result is
turned into frozen dataclasses.  Every check happens here, before any
subcommand reads data or writes output.

Setting an experiment to ``null`` in the user file removes it.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as _dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import yaml

from .backtest import PortfolioSpec
from .busdays import to_date
from .data import BUNDLED_UNIVERSES, resource_path
from .errors import ConfigError
from .features import DateSplits
from .training import TrainConfig
from .validator import validate_features, validate_input_files, validate_scoring

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_NAME = "default_config.yaml"
STOCK_UNIVERSE = "stocks"


@dataclass(frozen=True)
class Paths:
    statements: Optional[Path]
    prices: Optional[Path]
    pdfs: Optional[Path]
    stock_universe: Optional[Path]
    index: Optional[Path]
    holidays: Optional[Path]
    output: Path

    @property
    def store(self) -> Path:
        """Directory the ingested store is saved to."""
        return self.output / "store"

    @property
    def checkpoint(self) -> Path:
        return self.output / "model" / "checkpoint.npz"

    @property
    def training_log(self) -> Path:
        return self.output / "model" / "training_log.csv"

    @property
    def scores(self) -> Path:
        return self.output / "scores"

    @property
    def reports(self) -> Path:
        return self.output / "reports"

    def ingest_inputs(self) -> List[Tuple[str, Optional[Path]]]:
        return [
            ("paths.statements", self.statements),
            ("paths.prices", self.prices),
            ("paths.pdfs", self.pdfs),
            ("paths.holidays", self.holidays),
        ]


@dataclass(frozen=True)
class FeatureSettings:
    names: Tuple[str, ...]
    clip_bound: float = 10.0
    max_imputed_frac: float = 0.25
    max_inactive_days: int = 5


@dataclass(frozen=True)
class ScoringSettings:
    min_coverage: float = 0.8
    stale_pdf_days: int = 95


@dataclass(frozen=True)
class BacktestSettings:
    drift: bool = True
    cost_per_turnover: float = 0.0
    index_name: str = "S&P 500"


@dataclass(frozen=True)
class ExperimentConfig:
    """One backtest universe with its portfolio sizes."""

    name: str
    universe: str
    portfolios: Tuple[PortfolioSpec, ...]
    start: Optional[_dt.date] = None

    @property
    def is_stocks(self) -> bool:
        return self.universe == STOCK_UNIVERSE

    def universe_path(self, paths: Paths, base_dir: Path) -> Path:
        """Where the universe table lives (stock list, bundled or user ETF table)."""
        if self.is_stocks:
            if paths.stock_universe is None:
                raise ConfigError(f"experiment {self.name}: paths.stock_universe is not set")
            return paths.stock_universe
        if self.universe in BUNDLED_UNIVERSES:
            return resource_path(BUNDLED_UNIVERSES[self.universe])
        return _resolve(self.universe, base_dir)


@dataclass(frozen=True)
class RunConfig:
    paths: Paths
    splits: DateSplits
    features: FeatureSettings
    train: TrainConfig
    scoring: ScoringSettings
    backtest: BacktestSettings
    experiments: Tuple[ExperimentConfig, ...]
    base_dir: Path
    raw: Mapping[str, Any] = dataclasses.field(default_factory=dict, compare=False, repr=False)

    @property
    def seed(self) -> int:
        return self.train.seed

    def experiment(self, name: str) -> ExperimentConfig:
        for exp in self.experiments:
            if exp.name == name:
                return exp
        known = ", ".join(e.name for e in self.experiments) or "none"
        raise ConfigError(f"unknown experiment {name!r} (configured: {known})")

    def require_inputs(self, names: Iterable[str]) -> None:
        """Raise unless every named input path is set and exists."""
        wanted = set(names)
        pairs = [(n, p) for n, p in self.paths.ingest_inputs() if n in wanted]
        unset = [n for n, p in pairs if p is None and n != "paths.holidays"]
        if unset:
            raise ConfigError(f"required paths not set: {', '.join(unset)}")
        ok, reason = validate_input_files(pairs)
        if not ok:
            raise ConfigError(reason)


def load_defaults() -> Dict[str, Any]:
    with resource_path(DEFAULT_CONFIG_NAME).open("r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Merge ``override`` into a copy of ``base``; ``None`` values delete mapping entries."""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        elif value is None and isinstance(merged.get(key), Mapping):
            del merged[key]
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(text: str) -> Tuple[List[str], Any]:
    """Split ``section.key=value`` into the key path and the YAML-parsed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, _, value = text.partition("=")
    keys = [k for k in key.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return keys, parsed


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    result = copy.deepcopy(raw)
    for text in overrides:
        keys, value = parse_override(text)
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            if child is None:
                child = node[key] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {text!r}: {key} is not a section")
            node = child
        node[keys[-1]] = value
    return result


def _resolve(value: Any, base_dir: Path) -> Path:
    path = Path(str(value)).expanduser()
    return path if path.is_absolute() else (base_dir / path)


def _optional_path(value: Any, base_dir: Path) -> Optional[Path]:
    return None if value in (None, "") else _resolve(value, base_dir)


def _date(value: Any, key: str) -> _dt.date:
    try:
        return to_date(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {value!r} is not a date") from exc


def _integer(value: Any, key: str) -> int:
    """``value`` as an int; integral floats such as ``1e5`` or ``2000.0`` are accepted."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if not number.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return int(number)


def _cast(default: Any, value: Any, key: str) -> Any:
    if isinstance(default, int) and not isinstance(default, bool):
        return _integer(value, key)
    try:
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _section(raw: Mapping[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(value)


def _check_keys(section: Mapping[str, Any], allowed: Iterable[str], name: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {', '.join(unknown)}")


def _portfolio(entry: Any, where: str) -> PortfolioSpec:
    if not isinstance(entry, Mapping):
        raise ConfigError(f"{where}: portfolio entries must be mappings")
    _check_keys(entry, ("name", "top_k_count", "top_k_percent"), where)
    count = entry.get("top_k_count")
    percent = entry.get("top_k_percent")
    return PortfolioSpec(
        name=str(entry.get("name") or ""),
        top_k_count=None if count is None else _integer(count, f"{where}.top_k_count"),
        top_k_percent=None if percent is None else float(percent),
    )


def _experiments(raw: Mapping[str, Any]) -> Tuple[ExperimentConfig, ...]:
    experiments = []
    for name, body in _section(raw, "experiments").items():
        if body is None:
            continue
        if not isinstance(body, Mapping):
            raise ConfigError(f"experiments.{name} must be a mapping")
        where = f"experiments.{name}"
        _check_keys(body, ("universe", "start", "portfolios"), where)
        portfolios = tuple(_portfolio(p, where) for p in body.get("portfolios") or [])
        if not portfolios:
            raise ConfigError(f"{where}: at least one portfolio is required")
        start = body.get("start")
        experiments.append(
            ExperimentConfig(
                name=str(name),
                universe=str(body.get("universe") or STOCK_UNIVERSE),
                portfolios=portfolios,
                start=None if start is None else _date(start, f"{where}.start"),
            )
        )
    return tuple(experiments)


def from_dict(raw: Mapping[str, Any], base_dir: Path) -> RunConfig:
    """Build and validate a :class:`RunConfig` from merged raw settings."""
    _check_keys(
        raw,
        ("paths", "splits", "features", "train", "scoring", "backtest", "experiments"),
        "configuration",
    )
    paths_raw = _section(raw, "paths")
    _check_keys(paths_raw, [f.name for f in dataclasses.fields(Paths)], "paths")
    paths = Paths(
        statements=_optional_path(paths_raw.get("statements"), base_dir),
        prices=_optional_path(paths_raw.get("prices"), base_dir),
        pdfs=_optional_path(paths_raw.get("pdfs"), base_dir),
        stock_universe=_optional_path(paths_raw.get("stock_universe"), base_dir),
        index=_optional_path(paths_raw.get("index"), base_dir),
        holidays=_optional_path(paths_raw.get("holidays"), base_dir),
        output=_resolve(paths_raw.get("output") or "out", base_dir),
    )

    splits_raw = _section(raw, "splits")
    split_keys = [f.name for f in dataclasses.fields(DateSplits)]
    _check_keys(splits_raw, split_keys, "splits")
    missing = [k for k in split_keys if splits_raw.get(k) is None]
    if missing:
        raise ConfigError(f"splits: missing {', '.join(missing)}")
    splits = DateSplits(**{k: _date(splits_raw[k], f"splits.{k}") for k in split_keys})

    features_raw = _section(raw, "features")
    _check_keys(features_raw, [f.name for f in dataclasses.fields(FeatureSettings)], "features")
    features = FeatureSettings(
        names=tuple(features_raw.get("names") or ()),
        clip_bound=float(features_raw.get("clip_bound", 10.0)),
        max_imputed_frac=float(features_raw.get("max_imputed_frac", 0.25)),
        max_inactive_days=_integer(
            features_raw.get("max_inactive_days", 5), "features.max_inactive_days"
        ),
    )
    ok, reason = validate_features(features.names, features.clip_bound, features.max_imputed_frac)
    if not ok:
        raise ConfigError(reason)

    train_raw = _section(raw, "train")
    _check_keys(train_raw, [f.name for f in dataclasses.fields(TrainConfig)], "train")
    try:
        train = TrainConfig(
            **{
                f.name: _cast(f.default, train_raw[f.name], f"train.{f.name}")
                for f in dataclasses.fields(TrainConfig)
                if f.name in train_raw
            }
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    scoring_raw = _section(raw, "scoring")
    _check_keys(scoring_raw, [f.name for f in dataclasses.fields(ScoringSettings)], "scoring")
    scoring = ScoringSettings(
        min_coverage=float(scoring_raw.get("min_coverage", 0.8)),
        stale_pdf_days=_integer(
            scoring_raw.get("stale_pdf_days", 95), "scoring.stale_pdf_days"
        ),
    )
    ok, reason = validate_scoring(scoring.min_coverage, scoring.stale_pdf_days)
    if not ok:
        raise ConfigError(reason)

    backtest_raw = _section(raw, "backtest")
    _check_keys(backtest_raw, [f.name for f in dataclasses.fields(BacktestSettings)], "backtest")
    backtest = BacktestSettings(
        drift=bool(backtest_raw.get("drift", True)),
        cost_per_turnover=float(backtest_raw.get("cost_per_turnover", 0.0)),
        index_name=str(backtest_raw.get("index_name", "S&P 500")),
    )
    if backtest.cost_per_turnover < 0:
        raise ConfigError("backtest.cost_per_turnover must be non-negative")

    return RunConfig(
        paths=paths,
        splits=splits,
        features=features,
        train=train,
        scoring=scoring,
        backtest=backtest,
        experiments=_experiments(raw),
        base_dir=base_dir,
        raw=dict(raw),
    )


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """Load ``path`` (or only the defaults) and apply ``--set`` overrides.

    :param path: user YAML file; relative paths inside it resolve against
      its directory.  ``None`` uses the defaults relative to the working
      directory.
    :param overrides: ``section.key=value`` strings.
    :returns: the validated configuration.
    """
    raw = load_defaults()
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with path.open("r", encoding="utf-8") as f:
                user = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if user is None:
            user = {}
        if not isinstance(user, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = deep_merge(raw, user)
        base_dir = path.resolve().parent
    raw = apply_overrides(raw, overrides)
    config = from_dict(raw, base_dir)
    logger.debug("configuration loaded from %s", path or "defaults")
    return config


def write_default_config(path: Path, force: bool = False) -> Path:
    """Copy the bundled defaults to ``path`` for editing."""
    path = Path(path)
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(resource_path(DEFAULT_CONFIG_NAME).read_text(encoding="utf-8"), encoding="utf-8")
    return path


def save_config(config: Mapping[str, Any], path: Path) -> Path:
    """Persist a raw configuration mapping as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        yaml.safe_dump(dict(config), f, sort_keys=False)
    return path

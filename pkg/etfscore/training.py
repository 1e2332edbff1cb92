"""Training loop, checkpoint files and the training log.

:func:`fit` runs a fixed number of Adam iterations on batches drawn
uniformly with replacement from the training split.  Once past
``miniter`` it evaluates the validation split every ``save_interval``
iterations and keeps the best parameters seen so far.  The returned
:class:`TrainingRun` carries that best :class:`Checkpoint` together
with every evaluation so the selection can be audited afterwards.

Checkpoints are written as ``.npz`` compatible zip archives: one
``.npy`` member per array plus ``meta.json``.  Member timestamps are
fixed so identical content always produces identical bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, NumericError, ShapeError, TrainingAborted
from .features import LabeledSample, to_arrays
from .network import (
    TRAIN,
    AdamState,
    ModelParams,
    adam_step,
    backward,
    evaluate,
    forward,
    init_params,
    nll_loss,
)
from .store import FEATURE_COLUMNS
from .validator import validate_train_config

logger = logging.getLogger(__name__)

VALIDATION_ACCURACY = "validation_accuracy"
VALIDATION_LOSS = "validation_loss"
SELECTION_METRICS = (VALIDATION_ACCURACY, VALIDATION_LOSS)

CHECKPOINT_FORMAT = "etfscore-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class TrainConfig:
    maxiter: int = 100_000
    miniter: int = 50_000
    batch_size: int = 128
    save_interval: int = 1000
    learning_rate: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    selection_metric: str = VALIDATION_ACCURACY
    seed: int = 0

    def __post_init__(self) -> None:
        ok, reason = validate_train_config(self)
        if not ok:
            raise ConfigError(reason)

    def config_hash(self) -> str:
        """Short sha256 of the settings, stored in every checkpoint."""
        text = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def evaluation_iterations(self) -> List[int]:
        start = self.miniter // self.save_interval + 1
        stop = self.maxiter // self.save_interval
        return [k * self.save_interval for k in range(start, stop + 1)]


@dataclass(frozen=True)
class Evaluation:
    iteration: int
    train_loss: float  # mean batch loss over the preceding save_interval iterations
    val_accuracy: float
    val_loss: float

    def metric(self, name: str) -> float:
        return self.val_accuracy if name == VALIDATION_ACCURACY else self.val_loss


@dataclass
class Checkpoint:
    """A parameter snapshot with the data it needs to be scored with."""

    params: ModelParams
    iteration: int
    metric_name: str
    metric_value: float
    features: Tuple[str, ...] = FEATURE_COLUMNS
    floors: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURE_COLUMNS)))
    config_hash: str = ""

    def metadata(self) -> Dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_features": self.params.n_features,
            "features": list(self.features),
            "seed": self.params.seed,
            "config_hash": self.config_hash,
            "iteration": self.iteration,
            "metric_name": self.metric_name,
            "metric_value": self.metric_value,
            "shapes": {name: list(arr.shape) for name, arr in self.params.arrays()},
        }

    def members(self) -> List[Tuple[str, np.ndarray]]:
        return [*self.params.arrays(), ("floors", np.asarray(self.floors, dtype=np.float64))]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.metadata(), sort_keys=True).encode("utf-8"))
        for name, arr in self.members():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return digest.hexdigest()


@dataclass
class TrainingRun:
    best: Checkpoint
    evaluations: List[Evaluation]
    config: TrainConfig

    @property
    def n_evaluations(self) -> int:
        return len(self.evaluations)


def _is_better(value: float, best: Optional[float], metric: str) -> bool:
    if best is None:
        return True
    return value > best if metric == VALIDATION_ACCURACY else value < best


def fit(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig,
    features: Sequence[str] = FEATURE_COLUMNS,
    floors: Optional[np.ndarray] = None,
) -> TrainingRun:
    """Train on arrays and return the best validation checkpoint.

    :param X_train: ``(n, 8f)`` training inputs.
    :param y_train: ``(n,)`` class indices (0 = up, 1 = down).
    :param X_val: validation inputs, same width as ``X_train``.
    :param y_val: validation class indices.
    :param config: iteration counts, batch size and optimizer settings.
    :param features: feature names, stored in the checkpoint.
    :param floors: denominator floors, stored in the checkpoint.
    :returns: the best checkpoint and every evaluation in order.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(X_train) == 0:
        raise ConfigError("training split is empty")
    if len(X_val) == 0:
        raise ConfigError("validation split is empty")
    if X_train.shape[1] != X_val.shape[1]:
        raise ShapeError(f"train width {X_train.shape[1]} != validation width {X_val.shape[1]}")
    n_features = len(features)
    if X_train.shape[1] != 8 * n_features:
        raise ShapeError(f"inputs have {X_train.shape[1]} columns, expected {8 * n_features}")

    rng = np.random.default_rng(config.seed)
    params = init_params(n_features, config.seed)
    state = AdamState.for_params(params)
    floors = np.zeros(n_features) if floors is None else np.asarray(floors, dtype=np.float64)
    metric = config.selection_metric

    best: Optional[Checkpoint] = None
    evaluations: List[Evaluation] = []
    recent_losses: List[float] = []
    logger.info(
        "training on %d samples, validating on %d, %d iterations",
        len(X_train),
        len(X_val),
        config.maxiter,
    )
    for iteration in range(1, config.maxiter + 1):
        idx = rng.integers(0, len(X_train), size=config.batch_size)
        try:
            probs, cache = forward(
                params, X_train[idx], TRAIN, config.bn_momentum, config.bn_eps
            )
            loss = nll_loss(probs, y_train[idx])
            if not math.isfinite(loss):
                raise NumericError(f"loss is {loss}")
            grads = backward(cache, y_train[idx])
            adam_step(
                params, grads, state, config.learning_rate,
                config.beta1, config.beta2, config.adam_eps,
            )
        except NumericError as exc:
            raise TrainingAborted(iteration, str(exc)) from exc
        recent_losses.append(loss)

        if iteration % config.save_interval != 0:
            continue
        if iteration > config.miniter:
            accuracy, val_loss = evaluate(params, X_val, y_val)
            record = Evaluation(iteration, float(np.mean(recent_losses)), accuracy, val_loss)
            evaluations.append(record)
            value = record.metric(metric)
            logger.info(
                "iteration %d: train loss %.6f, validation accuracy %.4f, validation loss %.6f",
                iteration,
                record.train_loss,
                accuracy,
                val_loss,
            )
            if not math.isfinite(value):
                raise TrainingAborted(iteration, f"{metric} is {value}")
            if _is_better(value, best.metric_value if best else None, metric):
                best = Checkpoint(
                    params=params.copy(),
                    iteration=iteration,
                    metric_name=metric,
                    metric_value=value,
                    features=tuple(features),
                    floors=floors.copy(),
                    config_hash=config.config_hash(),
                )
        recent_losses.clear()

    if best is None:
        raise ConfigError("no evaluation took place; check miniter, maxiter and save_interval")
    logger.info("selected iteration %d (%s = %.6f)", best.iteration, metric, best.metric_value)
    return TrainingRun(best=best, evaluations=evaluations, config=config)


def train(
    train_samples: Sequence[LabeledSample],
    val_samples: Sequence[LabeledSample],
    config: TrainConfig,
    features: Sequence[str] = FEATURE_COLUMNS,
    floors: Optional[np.ndarray] = None,
) -> TrainingRun:
    """:func:`fit` on labeled samples."""
    if not val_samples:
        raise ConfigError("validation split is empty")
    if not train_samples:
        raise ConfigError("training split is empty")
    X_train, y_train = to_arrays(train_samples)
    X_val, y_val = to_arrays(val_samples)
    return fit(X_train, y_train, X_val, y_val, config, features, floors)


def _zip_info(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_ZIP_TIMESTAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    """Write ``checkpoint`` to ``path``; identical checkpoints give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr(
            _zip_info("meta.json"),
            json.dumps(checkpoint.metadata(), indent=2, sort_keys=True),
        )
        for name, arr in checkpoint.members():
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.ascontiguousarray(arr), allow_pickle=False)
            archive.writestr(_zip_info(f"{name}.npy"), buffer.getvalue())
    logger.info("wrote checkpoint %s (iteration %d)", path, checkpoint.iteration)
    return path


def load_checkpoint(path: Path, n_features: Optional[int] = None) -> Checkpoint:
    """Read a checkpoint and validate its shapes (against ``n_features`` when given)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read("meta.json").decode("utf-8"))
            arrays = {
                name[: -len(".npy")]: np.lib.format.read_array(
                    io.BytesIO(archive.read(name)), allow_pickle=False
                )
                for name in archive.namelist()
                if name.endswith(".npy")
            }
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unexpected format {meta.get('format')!r}")

    f = int(meta["n_features"])
    if n_features is not None and n_features != f:
        raise ShapeError(f"checkpoint was trained on {f} features, expected {n_features}")

    def group(prefix: str, count: int) -> List[np.ndarray]:
        try:
            return [arrays[f"{prefix}{i + 1}"].astype(np.float64) for i in range(count)]
        except KeyError as exc:
            raise ShapeError(f"{path}: missing array {exc}") from exc

    n_layers = sum(1 for name in arrays if name.startswith("W"))
    n_hidden = sum(1 for name in arrays if name.startswith("gamma"))
    params = ModelParams(
        n_features=f,
        seed=int(meta["seed"]),
        weights=group("W", n_layers),
        biases=group("b", n_layers),
        gammas=group("gamma", n_hidden),
        betas=group("beta", n_hidden),
        running_means=group("running_mean", n_hidden),
        running_vars=group("running_var", n_hidden),
    )
    params.validate()
    for name, arr in params.arrays():
        expected = meta["shapes"].get(name)
        if expected is not None and list(arr.shape) != expected:
            raise ShapeError(f"{path}: {name} has shape {arr.shape}, metadata says {expected}")
    floors = arrays.get("floors", np.zeros(f))
    if floors.shape != (f,):
        raise ShapeError(f"{path}: floors have shape {floors.shape}, expected ({f},)")
    return Checkpoint(
        params=params,
        iteration=int(meta["iteration"]),
        metric_name=str(meta["metric_name"]),
        metric_value=float(meta["metric_value"]),
        features=tuple(meta["features"]),
        floors=floors.astype(np.float64),
        config_hash=str(meta["config_hash"]),
    )


def write_training_log(run: TrainingRun, path: Path) -> Path:
    """One row per evaluation: ``iteration,train_loss,val_metric``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metric = run.config.selection_metric
    frame = pd.DataFrame(
        {
            "iteration": [e.iteration for e in run.evaluations],
            "train_loss": [e.train_loss for e in run.evaluations],
            "val_metric": [e.metric(metric) for e in run.evaluations],
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path

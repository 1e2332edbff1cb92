"""Run configuration validation utilities.

Each predicate inspects one part of a configuration and returns a
tuple ``(is_valid, reason)``.  ``reason`` is empty when the check
passes and otherwise says what is wrong in terms the user can act on.
Callers decide what to do with a failure; the configuration layer
raises :class:`etfscore.errors.ConfigError` with the reason.

The predicates only look at attributes, so they accept the frozen
dataclasses of :mod:`etfscore.config` as well as any object with the
same fields.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Tuple

from .store import FEATURE_COLUMNS

SELECTION_METRICS = ("validation_accuracy", "validation_loss")


def validate_train_config(cfg: Any) -> Tuple[bool, str]:
    """Validate training hyperparameters.

    :param cfg: object with the fields of :class:`etfscore.training.TrainConfig`.
    :returns: Tuple ``(is_valid, reason)``.

    Validation criteria:

    * ``maxiter`` and ``save_interval`` are positive and ``miniter`` is
      non-negative and smaller than ``maxiter``.
    * At least one evaluation falls in ``(miniter, maxiter]``.
    * ``batch_size`` is at least 2 (batch normalization needs batch
      statistics).
    * Learning rate, Adam and batch-norm constants are in range.
    * ``selection_metric`` is a known metric.
    """
    if cfg.maxiter < 1:
        return False, "maxiter must be at least 1"
    if cfg.miniter < 0 or cfg.miniter >= cfg.maxiter:
        return False, f"miniter must satisfy 0 <= miniter < maxiter, got {cfg.miniter}"
    if cfg.save_interval < 1:
        return False, "save_interval must be at least 1"
    if cfg.maxiter // cfg.save_interval <= cfg.miniter // cfg.save_interval:
        return False, (
            f"no evaluation between miniter={cfg.miniter} and maxiter={cfg.maxiter} "
            f"with save_interval={cfg.save_interval}"
        )
    if cfg.batch_size < 2:
        return False, "batch_size must be at least 2"
    if not cfg.learning_rate > 0:
        return False, "learning_rate must be positive"
    if not (0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1):
        return False, "Adam betas must lie in [0, 1)"
    if not cfg.adam_eps > 0 or not cfg.bn_eps > 0:
        return False, "epsilons must be positive"
    if not 0 < cfg.bn_momentum <= 1:
        return False, "bn_momentum must lie in (0, 1]"
    if cfg.selection_metric not in SELECTION_METRICS:
        return False, (
            f"selection_metric must be one of {', '.join(SELECTION_METRICS)}, "
            f"got {cfg.selection_metric!r}"
        )
    return True, ""


def validate_features(
    features: Sequence[str], clip_bound: float, max_imputed_frac: float
) -> Tuple[bool, str]:
    """Validate the feature list and the imputation settings."""
    if not features:
        return False, "at least one feature is required"
    unknown = [f for f in features if f not in FEATURE_COLUMNS]
    if unknown:
        return False, f"unknown features: {', '.join(unknown)}"
    if len(set(features)) != len(features):
        return False, "features are listed more than once"
    if not clip_bound > 0:
        return False, "clip_bound must be positive"
    if not 0 <= max_imputed_frac <= 1:
        return False, "max_imputed_frac must lie in [0, 1]"
    return True, ""


def validate_portfolio(
    top_k_count: Optional[int], top_k_percent: Optional[float]
) -> Tuple[bool, str]:
    """Exactly one selection mode with a usable size."""
    if (top_k_count is None) == (top_k_percent is None):
        return False, "give exactly one of top_k_count or top_k_percent"
    if top_k_count is not None and top_k_count < 1:
        return False, f"top_k_count must be at least 1, got {top_k_count}"
    if top_k_percent is not None and not 0 < top_k_percent <= 100:
        return False, f"top_k_percent must lie in (0, 100], got {top_k_percent}"
    return True, ""


def validate_scoring(min_coverage: float, stale_pdf_days: int) -> Tuple[bool, str]:
    if not 0 < min_coverage <= 1:
        return False, f"min_coverage must lie in (0, 1], got {min_coverage}"
    if stale_pdf_days < 0:
        return False, "stale_pdf_days must be non-negative"
    return True, ""


def validate_input_files(paths: Iterable[Tuple[str, Optional[Path]]]) -> Tuple[bool, str]:
    """Every named path that is set must exist.

    :param paths: pairs ``(name, path)``; ``None`` paths are skipped.
    """
    missing = [f"{name} ({path})" for name, path in paths if path is not None and not Path(path).exists()]
    if missing:
        return False, f"missing input files: {', '.join(missing)}"
    return True, ""

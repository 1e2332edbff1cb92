"""Exception hierarchy for etfscore.

Every error raised by the library derives from :class:`EtfScoreError`
and carries the process exit code the ``etfscore`` command line uses
when the error escapes a subcommand:

* ``1`` – configuration errors (:class:`ConfigError`)
* ``2`` – data errors (:class:`DataError` and subclasses)
* ``3`` – numeric failures (:class:`NumericError` and subclasses)

Library code raises; only :mod:`etfscore.cli` turns an exception into
an exit status.
"""

from __future__ import annotations

from typing import Iterable, List, Optional


class EtfScoreError(Exception):
    """Base class of all etfscore errors."""

    exit_code = 1


class ConfigError(EtfScoreError):
    """Raised when the run configuration is invalid or inconsistent."""

    exit_code = 1


class DataError(EtfScoreError):
    """Raised when input data violates a schema or an invariant."""

    exit_code = 2


class ParseError(DataError):
    """A row of an input file could not be parsed."""

    def __init__(self, path: str, line: int, message: str) -> None:
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SchemaError(DataError):
    """An input file has the wrong columns."""


class DuplicateRecordError(DataError):
    """Rows with the same key were found; ``lines`` lists every offender."""

    def __init__(self, path: str, key_name: str, lines: Iterable[int]) -> None:
        self.path = path
        self.lines: List[int] = sorted(lines)
        listed = ", ".join(str(n) for n in self.lines)
        super().__init__(f"{path}: duplicate {key_name} on lines {listed}")


class MissingDataError(DataError):
    """A point-in-time query found nothing at or before the requested date."""


class DegenerateCrossSectionError(DataError):
    """Label neutralization needs at least two finite samples."""


class CoverageGapError(DataError):
    """Scores are missing for some rebalance dates."""

    def __init__(self, missing: Iterable[object]) -> None:
        self.missing = list(missing)
        listed = ", ".join(str(d) for d in self.missing)
        super().__init__(f"no scores for rebalance dates: {listed}")


class NumericError(EtfScoreError):
    """A computation produced a non-finite or undefined value."""

    exit_code = 3


class ShapeError(NumericError):
    """Array dimensions do not match the model."""


class InsufficientDataError(NumericError):
    """Too few observations for a statistic."""


class UndefinedSharpeError(NumericError):
    """Sharpe ratio requested for a zero-volatility series."""


class TrainingAborted(NumericError):
    """Training hit a non-finite loss or parameter."""

    def __init__(self, iteration: int, message: str) -> None:
        self.iteration = iteration
        super().__init__(f"training aborted at iteration {iteration}: {message}")


class SelftestFailure(NumericError):
    """The synthetic end-to-end check did not meet its thresholds."""

    def __init__(self, failures: List[str], detail: Optional[str] = None) -> None:
        self.failures = failures
        text = "; ".join(failures)
        if detail:
            text = f"{text} ({detail})"
        super().__init__(f"selftest failed: {text}")

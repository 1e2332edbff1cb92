"""Top-level package for etfscore.

etfscore trains a classifier on quarterly financial-statement changes
to predict whether a stock beats the cross-sectional median next
quarter, scores ETFs as the holding-weighted average of their stocks'
scores, and backtests top-K ETF portfolios against an index and an
equal-weight baseline.

When this package is installed via pip the command line is available
as ``etfscore``; ``python -m etfscore.cli`` works from a checkout.
"""

__version__ = "0.1.0"

__all__ = [
    "backtest",
    "busdays",
    "cli",
    "config",
    "errors",
    "features",
    "metrics",
    "network",
    "pipeline",
    "report",
    "scoring",
    "store",
    "synthetic",
    "training",
    "validator",
]

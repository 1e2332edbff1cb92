"""Data package for etfscore.

This subpackage bundles static resources: ``default_config.yaml``
(the configuration every user file is merged over) and the two ETF
universe tables ``classic_etfs.csv`` and ``exotic_etfs.csv``.  They
are located with :func:`resource_path`.
"""

from pathlib import Path

BUNDLED_UNIVERSES = {
    "classic": "classic_etfs.csv",
    "exotic": "exotic_etfs.csv",
}


def resource_path(name: str) -> Path:
    """Absolute path of a bundled resource file."""
    return Path(__file__).parent / name


__all__ = ["BUNDLED_UNIVERSES", "resource_path"]

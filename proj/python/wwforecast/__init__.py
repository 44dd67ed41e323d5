"""Wastewater-informed county case forecasting (C++ core)."""

import json as _json

from ._core import (
    ConfigError,
    DataError,
    DivergenceError,
    Error,
    Metrics,
    ShapeError,
    compute_metrics,
    split_chronological,
    window_count,
)
from . import _core


def _dump(config):
    return config if isinstance(config, str) else _json.dumps(config)


def config_hash(config):
    """Hash of the fully resolved config; accepts a dict or a JSON string."""
    return _core.config_hash(_dump(config))


def run(subcommand, config, out_dir):
    """Runs one pipeline subcommand and returns its exit status."""
    return _core.run(subcommand, _dump(config), str(out_dir))


__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "Error",
    "Metrics",
    "ShapeError",
    "compute_metrics",
    "config_hash",
    "run",
    "split_chronological",
    "window_count",
]

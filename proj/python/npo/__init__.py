"""Python access to the npo toy trainer."""

import json as _json

from ._npo import (
    ChecksumError,
    ConfigError,
    ContractError,
    NotFoundError,
    NpoError,
    ParseError,
    SelectionError,
    default_config,
    estimate_v,
    group_advantages,
    measure_qv,
    plot,
    read_metrics,
    replay,
    resolve_config,
    select_rollback,
)
from ._npo import train as _train


def train(config):
    """Run training from a dict or JSON string; returns the run directory."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _train(config)


__all__ = [
    "ChecksumError", "ConfigError", "ContractError", "NotFoundError", "NpoError", "ParseError",
    "SelectionError", "default_config", "estimate_v", "group_advantages", "measure_qv", "plot",
    "read_metrics", "replay", "resolve_config", "select_rollback", "train",
]

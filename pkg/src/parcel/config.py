"""Connector hyperparameters, overridable from a JSON file."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

CONFIG_ENV = "PARCEL_CONFIG"


@dataclass(frozen=True)
class ConnectorConfig:
    width: int = 1152
    heads: int = 12
    mlp_hidden: int = 4304
    epsilon: float = 1e-15

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.width % self.heads:
            raise ValueError(f"width {self.width} must be a positive multiple of heads {self.heads}")
        if self.mlp_hidden < 1 or not self.epsilon >= 0:
            raise ValueError("mlp_hidden must be positive and epsilon nonnegative")


def load_config(path: str | os.PathLike | None = None, **overrides) -> ConnectorConfig:
    """Defaults, then the JSON file at ``path`` (or $PARCEL_CONFIG), then keyword overrides."""
    cfg = ConnectorConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(ConnectorConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)} in {path}")
        cfg = replace(cfg, **data)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg

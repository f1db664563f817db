"""Engine configuration: one JSON file, flags override, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

_RANGES = {
    "profile_window_days": (1, 3650),
    "block_hours": (1, 24),
    "stride_hours": (1, 24),
    "dest_window_hours": (1, 24),
    "phi": (1e-9, 1e3),
    "z_threshold": (1e-9, 1e6),
    "alert_cutoff": (1e-9, 1.0 - 1e-9),
    "k_max": (2, 64),
    "iqr_threshold": (1e-9, 1e6),
    "api_port": (1, 65535),
    "poll_interval": (1e-3, 3600),
    "seed": (-(2**63), 2**63 - 1),
}


@dataclass
class EngineConfig:
    data_dir: str = "./fame-data"
    profile_window_days: int = 30
    block_hours: int = 6
    stride_hours: int = 1
    dest_window_hours: int = 1
    phi: float = 3.0
    z_threshold: float = 4.0
    combiner_weights: tuple[float, float, float] = (0.5, 0.2, 0.3)
    alert_cutoff: float = 0.5
    rule_thresholds: dict = field(default_factory=lambda: {"origin": {}, "destination": {}})
    k_max: int = 8
    iqr_threshold: float = 1.5
    iqr_features: tuple[str, ...] = ("total_minutes",)
    api_port: int = 8300
    api_token: str = ""
    poll_interval: float = 1.0
    seed: int = 7

    def __post_init__(self):
        for name, (lo, hi) in _RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
        if 24 % self.block_hours != 0:
            raise ConfigError(f"block_hours must divide 24, got {self.block_hours}")
        if 24 % self.dest_window_hours != 0:
            raise ConfigError(f"dest_window_hours must divide 24, got {self.dest_window_hours}")
        if self.stride_hours > self.block_hours:
            raise ConfigError("stride_hours cannot exceed block_hours")
        w = self.combiner_weights
        if len(w) != 3 or any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"combiner_weights must be >= 0 and sum to 1, got {w}")

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "combiner_weights" in kwargs:
            kwargs["combiner_weights"] = tuple(kwargs["combiner_weights"])
        if "iqr_features" in kwargs:
            kwargs["iqr_features"] = tuple(kwargs["iqr_features"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def from_file(cls, path: Path) -> "EngineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(doc)

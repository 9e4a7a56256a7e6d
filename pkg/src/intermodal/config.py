"""Tunable thresholds for trace processing and transit matching.

Defaults are sized for urban stop spacing and device-typical GPS noise; every
value can be overridden from a JSON config file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields


@dataclass
class PipelineConfig:
    # trace assembly / segmentation
    accuracy_cutoff_m: float = 100.0
    hysteresis_s: float = 60.0
    merge_floor_s: float = 30.0
    gap_cutoff_s: float = 300.0
    # transit matching
    entry_radius_m: float = 150.0
    temporal_tolerance_s: float = 300.0
    spatial_accept_m: float = 100.0
    min_segment_points: int = 10
    # analytics
    heavy_below_ratio: float = 0.5
    medium_below_ratio: float = 0.75
    reference_percentile: float = 95.0

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_file(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(asdict(self), handle, indent=2, sort_keys=True)
            handle.write("\n")


@dataclass
class ServiceConfig:
    """Runtime wiring for the HTTP service; every field has an env override."""

    host: str = "127.0.0.1"
    port: int = 8099
    store_path: str = "./mobility-store"
    feed_dir: str | None = None
    privacy_key_path: str = "./privacy.key"

    _ENV = {
        "host": "INTERMODAL_HOST",
        "port": "INTERMODAL_PORT",
        "store_path": "INTERMODAL_STORE_PATH",
        "feed_dir": "INTERMODAL_FEED_DIR",
        "privacy_key_path": "INTERMODAL_KEY_PATH",
    }

    def apply_env(self) -> "ServiceConfig":
        for attr, var in self._ENV.items():
            value = os.environ.get(var)
            if value is not None:
                setattr(self, attr, int(value) if attr == "port" else value)
        return self

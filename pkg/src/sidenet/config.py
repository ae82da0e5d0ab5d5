"""Training configuration and the `key = value` config file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .detector import DetectorConfig
from .encoder import ATTR_NAMES, EncoderConfig
from .errors import ConfigError


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-3
    w_fcg: float = 0.15
    focal_gamma: float = 4.0
    epochs: int = 30
    patience: int = 10
    batch_size: int = 8
    tau: float = 10.0
    spatial_attr: str = "k"
    temporal_attrs: str = "q,k,v"
    dataset_fraction: float = 1.0
    loo_exclusion: str = ""
    use_spatial: bool = True
    use_temporal: bool = True
    use_fcg: bool = True
    fcg_sign: str = "neg"
    n_queries: int = 4
    share_temporal_weights: bool = False
    aggregate: str = "mean"
    frames_per_clip: int = 10
    clips_per_video: int = 4
    eval_clips_per_video: int = 2
    fps: float = 25.0
    max_steps: int = 0
    augment: bool = True
    mining_rounds: int = 32
    mining_frames: int = 64

    def __post_init__(self):
        if not (0 < self.dataset_fraction <= 1.0):
            raise ConfigError(f"dataset_fraction must lie in (0,1], got {self.dataset_fraction}")
        if self.spatial_attr not in ATTR_NAMES:
            raise ConfigError(f"spatial_attr must be one of {ATTR_NAMES}, got {self.spatial_attr!r}")
        for a in self.attr_tuple:
            if a not in ATTR_NAMES:
                raise ConfigError(f"temporal_attrs entry {a!r} not in {ATTR_NAMES}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.w_fcg < 0:
            raise ConfigError(f"w_fcg must be >= 0, got {self.w_fcg}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")

    @property
    def attr_tuple(self) -> tuple:
        return tuple(a.strip() for a in self.temporal_attrs.split(",") if a.strip())

    def detector_config(self, enc: EncoderConfig) -> DetectorConfig:
        return DetectorConfig.from_encoder(
            enc,
            frames=self.frames_per_clip,
            n_queries=self.n_queries,
            spatial_attr=self.spatial_attr,
            temporal_attrs=self.attr_tuple,
            use_spatial=self.use_spatial,
            use_temporal=self.use_temporal,
            use_fcg=self.use_fcg,
            share_temporal_weights=self.share_temporal_weights,
            aggregate=self.aggregate,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = value
        return cls(**out)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _parse_value(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """Parse 'key = value' lines; '#' starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(TrainConfig)}
    defaults = TrainConfig()
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parse_value(value, type(getattr(defaults, key)))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}")
    return values


def resolve_config(config_path=None, overrides: dict | None = None) -> TrainConfig:
    values = load_config_file(config_path) if config_path else {}
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(values)

"""
Training configuration: loss weights, augmentation policy and optimizer
schedule, with the two presets (single-pair Splice and SpliceNet) and a
KEY=VALUE file format read with python-dotenv.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple

from dotenv import dotenv_values

from extractor.vit_backend import VitConfig
from utils.errors import ConfigError, SpliceIOError

TRUE_VALUES = {"1", "true", "yes", "on"}
FALSE_VALUES = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1  # structure
    beta: float = 0.1  # identity

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class AugmentPolicy:
    crop_range: Tuple[float, float] = (0.95, 1.0)
    hflip_p: float = 0.5
    jitter_p: float = 0.5
    blur_p: float = 0.5
    blur_sigma: Tuple[float, float] = (0.1, 2.0)
    blur_kernel: int = 3
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1

    def __post_init__(self):
        for name in ("hflip_p", "jitter_p", "blur_p"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {value}")
        low, high = self.crop_range
        if not 0.0 < low <= high <= 1.0:
            raise ConfigError(f"crop_range must satisfy 0 < low <= high <= 1, got {self.crop_range}")
        if not 0.0 < self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ConfigError(f"blur_sigma must be a positive interval, got {self.blur_sigma}")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ConfigError(f"blur_kernel must be odd and positive, got {self.blur_kernel}")
        if not 0.0 <= self.hue <= 0.5 or min(self.brightness, self.contrast, self.saturation) < 0:
            raise ConfigError("jitter strengths must be >= 0 (hue at most 0.5)")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(crop_range=(1.0, 1.0), hflip_p=0.0, jitter_p=0.0, blur_p=0.0)


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    vit: VitConfig = field(default_factory=VitConfig)
    lr: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    iterations: int = 2000
    clean_pair_interval: int = 75
    vit_resize: int = 224
    identity_pair_p: float = 0.25
    perceptual: str = "lpips"
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    num_workers: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not 0.0 <= self.identity_pair_p <= 1.0:
            raise ConfigError(f"identity_pair_p must be a probability, got {self.identity_pair_p}")
        if self.clean_pair_interval < 0 or self.checkpoint_every < 0 or self.num_workers < 0:
            raise ConfigError("clean_pair_interval, checkpoint_every and num_workers must be >= 0")
        if self.vit_resize < self.vit.patch_size or self.vit_resize % self.vit.patch_size:
            raise ConfigError(
                f"vit_resize {self.vit_resize} must be a positive multiple of patch size {self.vit.patch_size}"
            )
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")


SPLICE_PRESET = TrainConfig(perceptual="mse")

SPLICENET_PRESET = TrainConfig(
    weights=LossWeights(alpha=2.0, beta=0.1),
    augment=AugmentPolicy(crop_range=(0.95, 0.95), jitter_p=0.2, blur_p=0.1),
    iterations=20000,
    clean_pair_interval=0,
)

PRESETS = {"splice": SPLICE_PRESET, "splicenet": SPLICENET_PRESET}


def _coerce(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in TRUE_VALUES | FALSE_VALUES:
                raise ValueError(raw)
            return lowered in TRUE_VALUES
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            kind = type(default[0]) if default else str
            return tuple(kind(p) for p in parts)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} ({exc})") from exc


def _apply(instance, prefix: str, values: Dict[str, str], used: set):
    changes = {}
    for f in dataclasses.fields(instance):
        key = f"{prefix}{f.name}".upper()
        if key in values:
            changes[f.name] = _coerce(key, values[key], getattr(instance, f.name))
            used.add(key)
    return dataclasses.replace(instance, **changes) if changes else instance


def read_config_file(path) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise SpliceIOError(f"config file not found: {path}")
    return {k.upper(): v for k, v in dotenv_values(path).items() if v is not None}


def merge_config(base: TrainConfig, values: Dict[str, str]) -> TrainConfig:
    """Apply upper-case KEY=VALUE strings (ALPHA, AUGMENT_*, VIT_*, TrainConfig fields) to base"""
    values = {k.upper(): str(v) for k, v in values.items()}
    used = set()
    weights = _apply(base.weights, "", values, used)
    augment = _apply(base.augment, "augment_", values, used)
    vit = _apply(base.vit, "vit_", values, used)

    scalar = {}
    for f in dataclasses.fields(base):
        if f.name in ("weights", "augment", "vit"):
            continue
        key = f.name.upper()
        if key in values:
            scalar[f.name] = _coerce(key, values[key], getattr(base, f.name))
            used.add(key)

    unknown = sorted(set(values) - used)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return dataclasses.replace(base, weights=weights, augment=augment, vit=vit, **scalar)


def load_train_config(path=None, overrides: Dict[str, str] = None, preset: str = "splice",
                      defaults: Dict[str, str] = None) -> TrainConfig:
    """
    Build the effective TrainConfig.

    Args:
        path: optional KEY=VALUE config file
        overrides: command-line KEY=VALUE pairs (highest precedence)
        preset: "splice" or "splicenet"
        defaults: settings-level values applied on top of the preset

    Returns:
        Validated TrainConfig
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values: Dict[str, str] = {}
    values.update({k.upper(): v for k, v in (defaults or {}).items() if v not in (None, "")})
    if path:
        values.update(read_config_file(path))
    values.update({k.upper(): v for k, v in (overrides or {}).items()})
    return merge_config(PRESETS[preset], values)


def config_snapshot(config: TrainConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)

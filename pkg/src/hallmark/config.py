"""Flat run configuration with validation and YAML round-trip.

One dataclass covers model architecture, loss weights, sampling ranges, and
training knobs so a single file fully determines a run. Unknown keys in a
config file are rejected rather than ignored.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import InvalidConfig

PHASES = ("pretrain_detector", "pretrain_transfer", "finetune_joint", "weak_finetune")


@dataclass
class Config:
    # Geometry
    num_landmarks: int = 68
    num_stacks: int = 4
    sr_blocks_per_module: int = 4
    input_size: int = 64
    sr_output_size: int = 128
    heatmap_size: int = 64

    # Stream widths. Reference: 256 pose channels, 64 hallucination channels.
    pose_channels: int = 256
    sr_channels: int = 64

    # Detector loss weights. heatmap_weight is a 0/1 switch: zero is the
    # unlabeled mode where the heatmap term is dropped entirely.
    heatmap_weight: float = 1.0
    image_l1_weight: float = 0.01
    gradient_l1_weight: float = 0.01

    # Transfer loss weights.
    gan_weight: float = 0.05
    l1_transfer_weight: float = 0.01
    perceptual_weight: float = 0.01

    # Transfer network
    transfer_blocks: int = 6
    transfer_channels: int = 64
    disc_channels: int = 64

    # Perceptual extractor: fixed two-conv feature map. Width is configurable;
    # weights default to a deterministic seeded initialization unless a weights
    # file is given.
    perceptual_channels: int = 64
    perceptual_weights: str | None = None

    # Heatmap rendering
    heatmap_sigma: float = 1.5

    # Pair-sampling ranges: angle = clamp(rotation_sigma_deg * z, +-rotation_max_deg),
    # scale = clamp(1 + scale_sigma * z, [scale_min, scale_max]), z ~ N(0, 1).
    rotation_max_deg: float = 30.0
    rotation_sigma_deg: float = 15.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    scale_sigma: float = 0.1

    # Training
    batch_size: int = 16
    seed: int = 0
    lr_detector: float = 1e-4
    lr_transfer: float = 2e-4
    lr_discriminator: float = 2e-4
    identity_pair_fraction: float = 0.0
    unlabeled_fraction: float = 0.5
    checkpoint_every: int = 500

    # Dataset roots (used by the CLI; empty means "pass explicitly").
    image_root: str | None = None
    video_root: str | None = None

    @property
    def sr_scale(self) -> int:
        return self.sr_output_size // self.input_size

    @property
    def pairs_per_batch(self) -> int:
        return self.batch_size // 2


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def validate_config(cfg: Config) -> Config:
    """Return cfg unchanged if every invariant holds; raise InvalidConfig naming
    the first violated constraint otherwise."""

    def fail(msg: str) -> None:
        raise InvalidConfig(msg)

    if cfg.num_landmarks <= 0:
        fail(f"num_landmarks must be positive, got {cfg.num_landmarks}")
    if cfg.num_stacks < 1:
        fail(f"num_stacks must be >= 1, got {cfg.num_stacks}")
    if cfg.sr_blocks_per_module < 1:
        fail(f"sr_blocks_per_module must be >= 1, got {cfg.sr_blocks_per_module}")
    if cfg.input_size < 8:
        fail(f"input_size must be >= 8, got {cfg.input_size}")
    if cfg.heatmap_size != cfg.input_size:
        fail(
            "heatmap_size must equal input_size (heads run at the stem "
            f"resolution), got {cfg.heatmap_size} vs {cfg.input_size}"
        )
    if cfg.sr_output_size % cfg.input_size != 0:
        fail(
            f"sr_output_size {cfg.sr_output_size} is not a multiple of "
            f"input_size {cfg.input_size}"
        )
    if cfg.sr_scale not in (2, 4):
        fail(f"sr_output_size / input_size must be 2 or 4, got {cfg.sr_scale}")
    for name in ("pose_channels", "sr_channels"):
        v = getattr(cfg, name)
        if v < 8 or v % 8 != 0:
            fail(f"{name} must be a positive multiple of 8, got {v}")
    if cfg.heatmap_weight not in (0.0, 1.0):
        fail(f"heatmap_weight must be 0 or 1, got {cfg.heatmap_weight}")
    for name in (
        "image_l1_weight",
        "gradient_l1_weight",
        "gan_weight",
        "l1_transfer_weight",
        "perceptual_weight",
    ):
        v = getattr(cfg, name)
        if not v > 0:
            fail(f"{name} must be > 0, got {v}")
    if cfg.transfer_blocks < 1:
        fail(f"transfer_blocks must be >= 1, got {cfg.transfer_blocks}")
    for name in ("transfer_channels", "disc_channels", "perceptual_channels"):
        v = getattr(cfg, name)
        if v < 4:
            fail(f"{name} must be >= 4, got {v}")
    if not cfg.heatmap_sigma > 0:
        fail(f"heatmap_sigma must be > 0, got {cfg.heatmap_sigma}")
    if not cfg.rotation_max_deg > 0 or not cfg.rotation_sigma_deg > 0:
        fail("rotation_max_deg and rotation_sigma_deg must be > 0")
    if not (0 < cfg.scale_min <= 1.0 <= cfg.scale_max):
        fail(
            f"scale range [{cfg.scale_min}, {cfg.scale_max}] must straddle 1.0 "
            "with positive lower bound"
        )
    if not cfg.scale_sigma > 0:
        fail(f"scale_sigma must be > 0, got {cfg.scale_sigma}")
    if cfg.batch_size < 2 or cfg.batch_size % 2 != 0:
        fail(f"batch_size must be even and >= 2 (pairs), got {cfg.batch_size}")
    for name in ("lr_detector", "lr_transfer", "lr_discriminator"):
        if not getattr(cfg, name) > 0:
            fail(f"{name} must be > 0")
    for name in ("identity_pair_fraction", "unlabeled_fraction"):
        v = getattr(cfg, name)
        if not 0.0 <= v <= 1.0:
            fail(f"{name} must lie in [0, 1], got {v}")
    if cfg.checkpoint_every < 1:
        fail(f"checkpoint_every must be >= 1, got {cfg.checkpoint_every}")
    return cfg


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> Config:
    """Build and validate a Config from a plain mapping; unknown keys rejected."""
    if not isinstance(data, dict):
        raise InvalidConfig(f"config document must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise InvalidConfig(f"unknown config key {unknown[0]!r}")
    coerced = {}
    for key, value in data.items():
        f = _FIELDS[key]
        if f.type in ("int",) and isinstance(value, bool):
            raise InvalidConfig(f"{key} must be an integer, got a boolean")
        if f.type == "int":
            if not isinstance(value, int):
                raise InvalidConfig(f"{key} must be an integer, got {value!r}")
        elif f.type == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidConfig(f"{key} must be a number, got {value!r}")
            value = float(value)
        elif f.type == "str | None":
            if value is not None and not isinstance(value, str):
                raise InvalidConfig(f"{key} must be a string or null, got {value!r}")
        coerced[key] = value
    return validate_config(Config(**coerced))


def apply_overrides(cfg: Config, overrides: dict) -> Config:
    """Return a new validated Config with string key=value overrides applied."""
    data = config_to_dict(cfg)
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise InvalidConfig(f"unknown config key {key!r}")
        f = _FIELDS[key]
        try:
            if f.type == "int":
                data[key] = int(raw)
            elif f.type == "float":
                data[key] = float(raw)
            elif f.type == "str | None":
                data[key] = None if raw in ("", "null", "none") else str(raw)
            else:
                data[key] = raw
        except ValueError as exc:
            raise InvalidConfig(f"cannot parse override {key}={raw!r}: {exc}") from exc
    return config_from_dict(data)


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))

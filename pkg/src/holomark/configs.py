"""Configuration objects shared across the pipeline.

All configs are plain dataclasses with strict `from_dict` parsing: unknown
keys are rejected so a typo in a JSON config fails loudly instead of being
silently ignored. `config_hash` gives a stable digest that is embedded in
every artifact a run emits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class SpliceConfig:
    """Controls tampered-sample synthesis (mask shape and source branch)."""

    p_threshold: float = 0.5
    semantic_mask_prob: float = 0.5
    coverage_range: tuple[float, float] = (0.05, 0.5)
    rng_seed: int = 0

    def validate(self) -> None:
        _check(0.0 <= self.p_threshold <= 1.0, "p_threshold must be in [0,1]")
        _check(0.0 <= self.semantic_mask_prob <= 1.0, "semantic_mask_prob must be in [0,1]")
        lo, hi = self.coverage_range
        _check(0.0 < lo <= hi < 1.0, "coverage_range must satisfy 0 < lo <= hi < 1")


@dataclass
class LossConfig:
    """Weights of the training objective."""

    lambda0: float = 0.2
    lambda1: float = 2.0
    lambda2: float = 0.5
    ps_backend: str = "pyramid_l1"

    def validate(self) -> None:
        _check(0.0 <= self.lambda0 <= 1.0, "lambda0 must be in [0,1]")
        _check(self.lambda1 > 0, "lambda1 must be > 0")
        _check(self.lambda2 > 0, "lambda2 must be > 0")
        _check(self.ps_backend in ("pyramid_l1", "external"),
               f"unknown ps_backend {self.ps_backend!r}")


@dataclass
class MoeConfig:
    """Expert-mixture block configuration.

    `placement` selects where mixture blocks sit in the UNet; "none" removes
    them entirely (plain UNet ablation). `experts` lists the enabled branches,
    `router` picks soft routing or plain summation of expert outputs.
    """

    n: int = 8
    heads: int = 4
    placement: str = "dec"
    experts: tuple[str, ...] = ("wm", "tamp", "bound")
    router: str = "soft"

    def validate(self) -> None:
        _check(self.n >= 1, "patch size n must be >= 1")
        _check(self.heads >= 1, "heads must be >= 1")
        _check(self.placement in ("enc", "dec", "encdec", "none"),
               f"placement must be enc|dec|encdec|none, got {self.placement!r}")
        _check(len(self.experts) >= 1, "at least one expert must be enabled")
        for name in self.experts:
            _check(name in ("wm", "tamp", "bound"), f"unknown expert {name!r}")
        _check(self.router in ("soft", "sum"), "router must be 'soft' or 'sum'")


@dataclass
class UnetConfig:
    widths: tuple[int, ...] = (32, 64, 128)
    stem_width: int = 32
    groups: int = 8

    def validate(self) -> None:
        _check(len(self.widths) >= 2, "unet needs at least 2 scales")
        _check(all(w >= self.groups for w in self.widths), "widths must be >= norm groups")


@dataclass
class AutoencoderConfig:
    latent_channels: int = 4
    downsample: int = 4
    base_width: int = 16
    bit_length: int = 32
    adapter_dim: int = 256

    def validate(self) -> None:
        _check(self.latent_channels >= 1, "latent_channels must be >= 1")
        _check(self.downsample in (2, 4, 8), "downsample must be 2, 4 or 8")
        _check(self.bit_length >= 1, "bit_length must be >= 1")
        _check(self.adapter_dim >= 1, "adapter_dim must be >= 1")


@dataclass
class PretrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    min_psnr_db: float = 28.0

    def validate(self) -> None:
        _check(self.epochs >= 1, "epochs must be >= 1")
        _check(self.batch_size >= 1, "batch_size must be >= 1")
        _check(self.lr > 0, "lr must be > 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    bit_length: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    checkpoint_every: int = 500
    loss: LossConfig = field(default_factory=LossConfig)
    splice: SpliceConfig = field(default_factory=SpliceConfig)

    def validate(self) -> None:
        _check(self.lr > 0, "lr must be > 0")
        _check(self.batch_size >= 1, "batch_size must be >= 1")
        _check(self.epochs >= 1, "epochs must be >= 1")
        _check(self.checkpoint_every >= 1, "checkpoint_every must be >= 1")
        self.loss.validate()
        self.splice.validate()


@dataclass
class AttackSpec:
    """One degradation to apply at evaluation time."""

    kind: str = "identity"
    param: float = 0.0
    seed: int = 0

    _RANGES = {
        "gaussian": (0.0, 25.0),
        "poisson": (1.0, 65535.0),
        "jpeg": (10, 95),
        "resize_cycle": (0.0, 1.0),
        "brightness": (0.5, 1.5),
        "contrast": (0.5, 1.5),
        "saturation": (0.0, 1.5),
        "identity": (0.0, 0.0),
    }

    def validate(self) -> None:
        _check(self.kind in self._RANGES, f"unknown attack kind {self.kind!r}")
        lo, hi = self._RANGES[self.kind]
        if self.kind == "identity":
            return
        if self.kind == "resize_cycle":
            _check(0.0 < self.param <= 1.0, "resize scale must be in (0,1]")
        else:
            _check(lo <= self.param <= hi,
                   f"{self.kind} param {self.param} outside [{lo},{hi}]")

    def label(self) -> str:
        if self.kind == "identity":
            return "identity"
        param = int(self.param) if float(self.param).is_integer() else self.param
        return f"{self.kind}({param})"


@dataclass
class RunConfig:
    """Top-level config consumed by the CLI."""

    out_dir: str = "runs/default"
    data_dir: str = ""
    val_dir: str = ""
    image_size: int = 64
    seed: int = 0
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    moe: MoeConfig = field(default_factory=MoeConfig)
    unet: UnetConfig = field(default_factory=UnetConfig)
    attacks: tuple[AttackSpec, ...] = ()
    pretrained_checkpoint: str = ""

    def validate(self) -> None:
        _check(self.image_size % self.autoencoder.downsample == 0,
               "image_size must be divisible by the autoencoder downsample factor")
        self.autoencoder.validate()
        self.pretrain.validate()
        self.train.validate()
        self.moe.validate()
        self.unet.validate()
        for spec in self.attacks:
            spec.validate()


_TUPLE_FIELDS = {
    "coverage_range",
    "betas",
    "widths",
    "experts",
    "attacks",
}


def _from_dict(cls, data: dict) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if name == "attacks":
            kwargs[name] = tuple(_from_dict(AttackSpec, v) for v in value)
        elif isinstance(value, dict):
            sub = _SECTION_TYPES.get(name)
            if sub is None:
                raise ConfigError(f"unexpected object for key {name!r}")
            kwargs[name] = _from_dict(sub, value)
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
        del ftype
    return cls(**kwargs)


_SECTION_TYPES = {
    "autoencoder": AutoencoderConfig,
    "pretrain": PretrainConfig,
    "train": TrainConfig,
    "moe": MoeConfig,
    "unet": UnetConfig,
    "loss": LossConfig,
    "splice": SpliceConfig,
}


def run_config_from_dict(data: dict) -> RunConfig:
    cfg = _from_dict(RunConfig, data)
    cfg.validate()
    return cfg


def to_dict(cfg: Any) -> Any:
    if dataclasses.is_dataclass(cfg):
        return {f.name: to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, tuple):
        return [to_dict(v) for v in cfg]
    return cfg


def config_hash(cfg: Any) -> str:
    """Stable sha256 digest of a config (first 16 hex chars)."""
    payload = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]

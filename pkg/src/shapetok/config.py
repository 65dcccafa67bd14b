"""Experiment configuration: dataclasses, presets, schema validation, hashing.

A config file is a JSON object with an optional ``preset`` key ("desk" or
"paper") providing defaults; remaining sections override preset values
field by field. The resolved config is validated against the JSON schema
shipped in ``schemas/experiment.schema.json`` (unknown keys are rejected)
and hashed so checkpoints can refuse to load under a different setup.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema

from .errors import ConfigError
from .tokenizer import TokenizerConfig

FAMILIES = ("sphere", "box", "cylinder", "torus", "cone")


@dataclass(frozen=True)
class DataConfig:
    families: tuple[str, ...] = ("sphere", "box", "cylinder", "torus", "cone")
    shapes_per_family: int = 2
    n_points: int = 256
    views_per_shape: int = 6
    image_res: int = 32
    elevation: float = 0.3
    camera: str = "orthographic"
    test_fraction: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    d_cond: int = 32
    patch_size: int = 8
    prefix_len: int = 16
    d_model: int = 128
    mae_layers: int = 4
    mae_heads: int = 4
    denoise_layers: int = 3
    denoise_hidden: int = 256
    time_dim: int = 64
    recon_dim: int = 64
    recon_layers: int = 2
    recon_heads: int = 4
    init_seed: int = 0


@dataclass(frozen=True)
class DiffusionConfig:
    train_steps: int = 1000
    schedule: str = "cosine"
    sample_steps: int = 100


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 8
    lr: float = 2e-4
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    seed: int = 0
    mask_ratio_min: float = 0.7
    mask_ratio_max: float = 1.0
    cond_dropout: float = 0.1
    grad_clip: float = 1.0
    warmup_steps: int = 0
    ema_decay: float | None = None
    modality_mix: float = 0.5
    recon_epochs: int = 400
    recon_lr: float = 1e-3
    log_every: int = 50


@dataclass(frozen=True)
class GenerationConfig:
    total_steps: int = 16
    temperature: float = 1.0
    cfg_scale: float = 1.0
    fusion_step: int = 30
    fusion_ratio: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class MetricsConfig:
    f_score_tau_frac: float = 0.02
    fid_features: int = 32
    fid_seed: int = 7


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "desk"
    dataset: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def n_tokens(self) -> int:
        return self.tokenizer.n_tokens(self.dataset.n_points)

    def token_dim(self) -> int:
        return self.tokenizer.token_dim()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["families"] = list(self.dataset.families)
        return d


# Preset defaults. "desk" fits a laptop CPU; "paper" pins the published
# model dimensions and training settings (800 epochs, batch 256, lr 1e-4,
# 16-layer MAE at width 1024, 8-layer denoiser at 1280, 64x1024 prefix,
# 24-layer reconstruction adapter at 512, 1024 points per shape).
PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {
        "dataset": {"n_points": 1024},
        "model": {
            "prefix_len": 64,
            "d_model": 1024,
            "mae_layers": 16,
            "mae_heads": 16,
            "denoise_layers": 8,
            "denoise_hidden": 1280,
            "recon_dim": 512,
            "recon_layers": 24,
            "recon_heads": 8,
        },
        "train": {"epochs": 800, "batch_size": 256, "lr": 1e-4},
        "generation": {"total_steps": 64},
    },
}

_SECTION_TYPES = {
    "dataset": DataConfig,
    "tokenizer": TokenizerConfig,
    "model": ModelConfig,
    "diffusion": DiffusionConfig,
    "train": TrainConfig,
    "generation": GenerationConfig,
    "metrics": MetricsConfig,
}


def _schema() -> dict:
    text = resources.files("shapetok.schemas").joinpath("experiment.schema.json").read_text()
    return json.loads(text)


def validate_raw(raw: dict) -> None:
    """Schema-validate a raw config dict, rejecting unknown keys."""
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {e.message}") from e


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a raw dict (preset + overrides)."""
    validate_raw(raw)
    preset = raw.get("preset", "desk")
    merged = _merge(PRESETS[preset], {k: v for k, v in raw.items() if k != "preset"})

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        kwargs = merged.get(name, {})
        if name == "dataset" and "families" in kwargs:
            kwargs = dict(kwargs, families=tuple(kwargs["families"]))
        sections[name] = cls(**kwargs)
    cfg = ExperimentConfig(preset=preset, **sections)
    _check_cross_fields(cfg)
    return cfg


def _check_cross_fields(cfg: ExperimentConfig) -> None:
    if cfg.preset == "paper":
        t = cfg.train
        if (t.epochs, t.batch_size, t.lr) != (800, 256, 1e-4):
            raise ConfigError("paper preset pins epochs=800, batch_size=256, lr=1e-4")
    if cfg.dataset.n_points % cfg.tokenizer.group_size != 0:
        raise ConfigError(
            f"n_points {cfg.dataset.n_points} not divisible by "
            f"group_size {cfg.tokenizer.group_size}"
        )
    if cfg.dataset.image_res % cfg.model.patch_size != 0:
        raise ConfigError("image_res must be divisible by patch_size")
    if not 0.0 <= cfg.train.mask_ratio_min <= cfg.train.mask_ratio_max <= 1.0:
        raise ConfigError("mask ratio range must satisfy 0 <= min <= max <= 1")
    if cfg.generation.total_steps > cfg.n_tokens():
        raise ConfigError("generation total_steps cannot exceed the token count")
    for fam in cfg.dataset.families:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown shape family {fam!r}")


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
    return resolve(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the fully resolved config."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()

"""Run configuration: a YAML document with a fixed, documented key set.

Top-level sections and their keys (defaults in parentheses)::

    seed (0)
    model:     variant (cross-view-token), width_multiplier (0.125), blocks_per_stage (2),
               in_channels (1), input_size (32), head (binary), task_count (1),
               view (0), share_branches (false), placement (3)
    attention: heads (4), embed_dim (32), tokens (16), dropout (0.1)
    schedule:  lr_max (1e-3), lr_min (1e-6), epochs (40), warmup (4)
    train:     batch_size (32), eval_batch_size (100), selection (final), augment (true),
               weight_decay (0), grad_clip (0), checkpoint_every (0), class_weighting (true),
               resume (null)
    augment:   flip_p, max_rotation_deg, scale_range, max_shift, elastic_sigma, elastic_alpha
    data:      train, val, test (container paths; val/test optional)
    synth:     name (data), n (2000), image_size (32), marker_size (6), alphabet (4), noise (0.1),
               fold (0), id_offset (0), multitask (false), uncertain_rate (0.1), unknown_rate (0.1),
               seed (0, generator seed; the top-level seed drives init, shuffling and dropout),
               val_n (500), test_n (500)

Unknown keys anywhere raise :class:`~crossview.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .attention import AttentionConfig
from .data import AugmentParams, SynthTaskSpec
from .errors import ConfigError
from .models import ModelSpec
from .optim import ScheduleSpec

SELECTION_RULES = ("final", "per-task-best")


@dataclass
class ModelSection:
    variant: str = "cross-view-token"
    width_multiplier: float = 0.125
    blocks_per_stage: int = 2
    in_channels: int = 1
    input_size: int = 32
    head: str = "binary"
    task_count: int = 1
    view: int = 0
    share_branches: bool = False
    placement: int = 3


@dataclass
class AttentionSection:
    heads: int = 4
    embed_dim: int = 32
    tokens: int = 16
    dropout: float = 0.1


@dataclass
class TrainSection:
    batch_size: int = 32
    eval_batch_size: int = 100
    selection: str = "final"
    augment: bool = True
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    checkpoint_every: int = 0
    class_weighting: bool = True
    resume: str | None = None


@dataclass
class DataSection:
    train: str | None = None
    val: str | None = None
    test: str | None = None


@dataclass
class SynthSection(SynthTaskSpec):
    """Synthetic data used when ``data.train`` is unset: train ids first, then val, then test."""

    name: str = "data"
    seed: int = 0
    val_n: int = 500
    test_n: int = 500


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    attention: AttentionSection = field(default_factory=AttentionSection)
    # desk-scale default: 1e-3 peak rate (see README); ScheduleSpec itself keeps 1e-4
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(lr_max=1e-3))
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentParams = field(default_factory=AugmentParams)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthSection = field(default_factory=SynthSection)

    # -- conversions ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["scale_range"] = list(d["augment"]["scale_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        return _build(cls(), d or {}, "")

    def model_spec(self) -> ModelSpec:
        att = AttentionConfig(**asdict(self.attention))
        return ModelSpec(attention=att, **asdict(self.model))

    def synth_spec(self) -> SynthTaskSpec:
        d = asdict(self.synth)
        for key in ("name", "seed", "val_n", "test_n"):
            d.pop(key)
        return SynthTaskSpec(**d)

    def validate(self) -> None:
        self.model_spec().validate()
        self.schedule.validate()
        self.synth_spec().validate()
        if self.train.selection not in SELECTION_RULES:
            raise ConfigError(f"train.selection must be one of {SELECTION_RULES}, got {self.train.selection!r}")
        if self.train.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 (batch norm)")
        if self.train.eval_batch_size < 1:
            raise ConfigError("train.eval_batch_size must be >= 1")
        if self.synth.val_n < 0 or self.synth.test_n < 0:
            raise ConfigError("synth.val_n and synth.test_n must be >= 0")

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _build(base, d: Any, where: str):
    """Copy of dataclass instance ``base`` with the keys of ``d`` applied recursively."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(base)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join((where + str(k)) for k in unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(default, value, f"{where}{name}.")
        elif name == "scale_range":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ConfigError(f"{where}{name} must be a [low, high] pair, got {value!r}")
            kwargs[name] = tuple(float(v) for v in value)
        else:
            kwargs[name] = _coerce(value, default, where + name)
    return dataclasses.replace(base, **kwargs)


def _coerce(value, default, key):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def apply_override(d: dict, item: str) -> None:
    """Apply ``a.b.c=value`` (value parsed as YAML) to a nested dict in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {item!r}") from exc
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r} descends into a non-section")
    node[parts[-1]] = value


def load_config(path: str | Path | None = None, overrides: list[str] | None = None, seed: int | None = None) -> RunConfig:
    d: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides or []:
        apply_override(d, item)
    if seed is not None:
        d["seed"] = seed
    cfg = RunConfig.from_dict(d)
    cfg.validate()
    return cfg

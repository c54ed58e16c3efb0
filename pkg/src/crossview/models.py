"""Single-view, late-join and cross-view (pixel / token) classifiers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .attention import AttentionConfig, CrossViewTransformer, bidirectional_apply
from .errors import ConfigError, DimensionError
from .nn import Backbone, Linear, Module, global_avg_pool
from .tensor import Tensor, concat, no_grad

VARIANTS = ("single-view", "late-join", "cross-view-pixel", "cross-view-token")
HEADS = ("binary", "multitask")


@dataclass
class ModelSpec:
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
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    @property
    def num_views(self) -> int:
        return 1 if self.variant == "single-view" else 2

    @property
    def is_cross_view(self) -> bool:
        return self.variant.startswith("cross-view")

    @property
    def outputs(self) -> int:
        return 1 if self.head == "binary" else 3 * self.task_count

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head == "binary" and self.task_count != 1:
            raise ConfigError("binary head has exactly one task")
        if self.task_count < 1:
            raise ConfigError("task_count must be >= 1")
        if self.width_multiplier <= 0 or self.blocks_per_stage < 1 or self.in_channels < 1:
            raise ConfigError("width_multiplier, blocks_per_stage and in_channels must be positive")
        if self.view not in (0, 1):
            raise ConfigError(f"view must be 0 or 1, got {self.view}")
        if not 1 <= self.placement <= 3:
            raise ConfigError(f"placement must be after stage 1, 2 or 3, got {self.placement}")
        if self.input_size % 32:
            raise ConfigError(f"input_size must be divisible by 32, got {self.input_size}")
        if self.is_cross_view:
            self.attention_config().validate()

    def attention_config(self) -> AttentionConfig:
        """Attention settings with source mode and feature count implied by the variant."""
        widths = Backbone.stage_widths(self.width_multiplier)
        cfg = AttentionConfig(**asdict(self.attention))
        cfg.features = widths[self.placement - 1]
        cfg.source_mode = "tokens" if self.variant == "cross-view-token" else "pixels"
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        att = AttentionConfig(**d.pop("attention", {}))
        return cls(attention=att, **d)


@dataclass
class Prediction:
    """Probabilities: ``binary`` (N,) for the sigmoid head; ``task_probs`` (N, T, 3) for multitask.

    ``scores`` (N, T) is the per-task binary score used for AUC.
    """

    scores: np.ndarray
    binary: np.ndarray | None = None
    task_probs: np.ndarray | None = None


class Model(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        spec.validate()
        self.spec = spec
        rng = rngmod.stream(seed, "init", 0)
        branches = 1 if (spec.num_views == 1 or spec.share_branches) else 2
        self.branches = []
        for i in range(branches):
            branch = Backbone(spec.in_channels, spec.width_multiplier, spec.blocks_per_stage, rng=rng)
            self.add_module(f"branch{i}", branch)
            self.branches.append(branch)
        width = self.branches[0].widths[3]
        self.fc = Linear(width * spec.num_views, spec.outputs, rng=rng)
        if spec.is_cross_view:
            att_rng = rngmod.stream(seed, "init", 1)
            cfg = spec.attention_config()
            self.into_a = CrossViewTransformer(cfg, rng=att_rng)
            self.into_b = CrossViewTransformer(cfg, rng=att_rng)

    def branch(self, view: int) -> Backbone:
        return self.branches[view if len(self.branches) > 1 else 0]

    def features(self, views: list[Tensor], training: bool = False, rng=None) -> list[Tensor]:
        """Per-view feature maps after the last residual stage."""
        spec = self.spec
        if spec.num_views == 1:
            return [self.branch(0).run(views[0])]
        if not spec.is_cross_view:
            return [self.branch(v).run(views[v]) for v in range(2)]
        k = spec.placement
        fa = self.branch(0).run(views[0], 0, k)
        fb = self.branch(1).run(views[1], 0, k)
        ya, yb = bidirectional_apply(fa, fb, self.into_a, self.into_b, training=training, rng=rng)
        return [self.branch(0).run(ya, k, 4), self.branch(1).run(yb, k, 4)]

    def forward(self, views, training: bool = False, rng=None) -> Tensor:
        """Logits (N, outputs) for a list of per-view tensors (N, C, H, W)."""
        views = self._select_views(views)
        self.train(training)
        pooled = [global_avg_pool(f) for f in self.features(views, training, rng)]
        joined = pooled[0] if len(pooled) == 1 else concat(pooled, axis=1)
        return self.fc(joined)

    def _select_views(self, views) -> list[Tensor]:
        if isinstance(views, np.ndarray):
            if views.ndim != 5:
                raise DimensionError(f"expected views array (N, V, C, H, W), got {views.shape}")
            views = [Tensor(views[:, v]) for v in range(views.shape[1])]
        views = [v if isinstance(v, Tensor) else Tensor(v) for v in views]
        if self.spec.num_views == 1:
            if len(views) == 2:
                views = [views[self.spec.view]]
        elif len(views) != 2:
            raise DimensionError(f"{self.spec.variant} needs exactly two views, got {len(views)}")
        for v in views:
            if v.ndim != 4 or v.shape[1] != self.spec.in_channels:
                raise DimensionError(f"view tensor {v.shape} does not match in_channels={self.spec.in_channels}")
        return views

    def attention_parameter_count(self) -> int:
        if not self.spec.is_cross_view:
            return 0
        return self.into_a.num_parameters() + self.into_b.num_parameters()


def build(spec: ModelSpec, seed: int = 0) -> Model:
    return Model(spec, seed)


def infer_binary_from_3class(task_logits: np.ndarray) -> np.ndarray:
    """P(positive) from a softmax over the negative and positive logits only."""
    task_logits = np.asarray(task_logits, dtype=np.float64)
    diff = task_logits[..., 2] - task_logits[..., 0]
    e = np.exp(-np.abs(diff))
    return np.where(diff >= 0, 1 / (1 + e), e / (1 + e))


def logits_to_prediction(spec: ModelSpec, logits: np.ndarray) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64)
    if spec.head == "binary":
        z = logits[:, 0]
        e = np.exp(-np.abs(z))
        p = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
        return Prediction(scores=p[:, None], binary=p)
    task_logits = logits.reshape(len(logits), spec.task_count, 3)
    z = task_logits - task_logits.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    return Prediction(scores=infer_binary_from_3class(task_logits), task_probs=probs)


def forward(model: Model, batch, training: bool = False, rng=None) -> Prediction:
    """Predictions for a :class:`~crossview.data.SampleBatch` (or a raw views array)."""
    views = batch.views if hasattr(batch, "views") else batch
    if training:
        logits = model(views, training=True, rng=rng)
    else:
        with no_grad():
            logits = model(views, training=False)
    return logits_to_prediction(model.spec, logits.data)

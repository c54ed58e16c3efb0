"""Adam and the warm-up + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor


@dataclass
class ScheduleSpec:
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    epochs: int = 40
    warmup: float = 4.0

    def validate(self) -> None:
        if not 0 < self.warmup < self.epochs:
            raise ConfigError(f"need 0 < warmup < epochs, got warmup={self.warmup}, epochs={self.epochs}")
        if not 0 <= self.lr_min < self.lr_max:
            raise ConfigError(f"need 0 <= lr_min < lr_max, got {self.lr_min}, {self.lr_max}")


def lr_at(t: float, spec: ScheduleSpec) -> float:
    """Learning rate at fractional epoch ``t``: linear warm-up, then cosine decay to ``lr_min``."""
    if t < spec.warmup:
        return spec.lr_max * t / spec.warmup
    progress = (t - spec.warmup) / (spec.epochs - spec.warmup)
    c = 0.5 * (1.0 + math.cos(math.pi * progress))
    # written as a convex blend so that c == 1 and c == 0 hit the endpoints exactly
    return spec.lr_max * c + spec.lr_min * (1.0 - c)


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: list[tuple[str, Tensor]],
    state: OptimState,
    lr: float,
    weight_decay: float = 0.0,
    grad_clip: float = 0.0,
) -> None:
    """One bias-corrected Adam update, in place. Parameters without a gradient are skipped."""
    grads = {}
    for name, p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        grads[name] = p.grad
    if grad_clip > 0:
        total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if total > grad_clip:
            factor = grad_clip / total
            grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay:
            g = g + p.data.dtype.type(weight_decay) * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        dt = p.data.dtype.type
        p.data -= dt(lr) * (m / dt(corr1)) / (np.sqrt(v / dt(corr2)) + dt(state.eps))

"""AdamW-style optimizer, EMA teacher update, warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import ValidationError


class NonFiniteGradientError(RuntimeError):
    """A gradient went NaN/inf; carries the offending parameter name."""


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)  # first moments, shaped like params
    v: dict = field(default_factory=dict)  # second moments


def adamw_step(
    params: dict,
    grads: dict,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
) -> None:
    """One in-place update with bias-corrected moments and decoupled decay.

    The decay term lr * wd * theta is subtracted from the parameters directly
    and never enters the moment estimates.
    """
    if not state.m:
        state.m = {name: np.zeros_like(p) for name, p in params.items()}
        state.v = {name: np.zeros_like(p) for name, p in params.items()}
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r} at step {state.step}")
        if g.shape != p.shape:
            raise ValidationError(f"adamw_step: gradient shape mismatch for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            p -= lr * weight_decay * p


def ema_update(teacher: dict, student: dict, decay: float) -> None:
    """teacher <- decay * teacher + (1 - decay) * student, elementwise."""
    if teacher.keys() != student.keys():
        raise ValidationError("ema_update: parameter sets differ")
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ValidationError(f"ema_update: shape mismatch for {name!r}")
        t *= decay
        t += (1.0 - decay) * s


@dataclass
class ScheduleConfig:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValidationError(
                f"schedule: need 0 < warmup ({self.warmup_steps}) < total ({self.total_steps})"
            )


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Linear warmup to base_lr over the first W steps, then cosine decay to 0."""
    if not 0 <= step <= cfg.total_steps:
        raise ValidationError(f"lr_at: step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))

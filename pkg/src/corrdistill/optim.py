"""Adam and the warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class ScheduleConfig:
    lr_peak: float = 2e-5
    lr_final: float = 1e-7
    epochs: int = 20
    warmup_epochs: int = 1
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not self.lr_peak >= self.lr_final > 0:
            raise ConfigError(
                f"need lr_peak >= lr_final > 0, got {self.lr_peak} and {self.lr_final}"
            )
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} and {self.epochs}"
            )
        if self.steps_per_epoch < 1:
            raise ConfigError(f"steps_per_epoch must be >= 1, got {self.steps_per_epoch}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate for optimizer step ``step`` (0-based).

    Linear ramp to ``lr_peak`` over the warmup steps, then cosine decay that
    reaches ``lr_final`` exactly on the last step.
    """
    if not 0 <= step < cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps})")
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.lr_peak * (step + 1) / warm
    span = cfg.total_steps - warm - 1
    progress = (step - warm) / span if span > 0 else 1.0
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
            **kwargs,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are matching sequences of arrays. Returns
    ``(new_params, new_state)``; the inputs are left untouched.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and optimizer buffers differ in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for k, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"tensor {k}: param {p.shape}, grad {g.shape}, buffer {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {k}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)

"""Adam with bias correction, and the warmup + linear-decay learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mtlm.errors import ContractViolation


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractViolation("Adam betas must lie in (0, 1)")

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh dicts and leaves inputs untouched."""
    if lr < 0:
        raise ContractViolation("learning rate must be non-negative")
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ContractViolation("parameter, gradient and moment names differ")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ContractViolation(f"shape mismatch for {name}: {p.shape} vs {g.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t, b1, b2, eps)


@dataclass(frozen=True)
class LrSchedule:
    warmup_steps: int = 5000
    peak_lr: float = 2e-4
    min_lr: float = 1e-6
    total_steps: int = 100_000

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ContractViolation("warmup_steps must be >= 1")
        if not (0.0 < self.min_lr <= self.peak_lr):
            raise ContractViolation("need 0 < min_lr <= peak_lr")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> peak over warmup, then linear decay to ``min_lr`` at ``total_steps``."""
    s = schedule
    if step <= s.warmup_steps:
        return s.peak_lr * step / s.warmup_steps
    if step >= s.total_steps:
        return s.min_lr
    frac = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return s.peak_lr + (s.min_lr - s.peak_lr) * frac

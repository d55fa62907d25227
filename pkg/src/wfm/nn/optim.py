"""Adam with bias correction and stepped exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NanGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    base_lr: float = 1e-3
    decay: float = 0.97
    decay_every: int = 1000
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def learning_rate(self) -> float:
        """Effective lr at the current step count."""
        return self.base_lr * self.decay ** (self.step // self.decay_every)


def adam_step(state: OptimizerState, slots: dict, grads: dict):
    """One in-place Adam update over the named tensor slots.

    ``grads`` maps slot name to gradient; missing slots are skipped
    (treated as zero gradient).  Raises on NaN gradients, naming the
    offending slot.
    """
    lr = state.learning_rate()
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if name not in slots:
            raise KeyError(f"gradient for unknown slot {name!r}")
        if not np.all(np.isfinite(g)):
            raise NanGradientError(f"non-finite gradient in slot {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(slots[name])
            state.v[name] = np.zeros_like(slots[name])
        state.m[name] = BETA1 * state.m[name] + (1 - BETA1) * g
        state.v[name] = BETA2 * state.v[name] + (1 - BETA2) * g * g
        m_hat = state.m[name] / (1 - BETA1**t)
        v_hat = state.v[name] / (1 - BETA2**t)
        slots[name] -= lr * m_hat / (np.sqrt(v_hat) + EPS)
    return state

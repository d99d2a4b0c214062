"""Adam with a stepwise exponential learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.95
    decay_every: int = 20000
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def effective_lr(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.lr * self.decay_factor ** (t // self.decay_every)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, in place; returns ``params``.

    The step counter is incremented first, so the k-th update uses
    ``lr * decay_factor ** (k // decay_every)``.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: {params[name].shape} vs {g.shape}")
    state.t += 1
    t = state.t
    lr = state.effective_lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params

"""Bias-corrected adaptive-moment optimizer over flat parameter lists."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("moment decay rates must lie in (0, 1)")
        if self.step < 0:
            raise ValueError("step count must be non-negative")


def adam_init(params: list[np.ndarray], lr: float = 1e-3,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
    )


def adam_update(state: AdamState, params: list[np.ndarray],
                grads: list[np.ndarray]) -> tuple[AdamState, list[np.ndarray]]:
    """One bias-corrected step; pure, returns fresh state and parameters."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params / grads / state block counts differ")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"block {i}: grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {i}")

    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return AdamState(step=t, m=new_m, v=new_v, lr=state.lr, beta1=state.beta1,
                     beta2=state.beta2, eps=state.eps), new_p

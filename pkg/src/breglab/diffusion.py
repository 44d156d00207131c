"""Forward diffusion process: schedules, perturbation kernel, time sampling.

The perturbation kernel maps a clean sample x0 to the noisy state
x_t = alpha_t * x0 + sigma_t * xi with xi standard normal.  Two schedule
kinds are supported: variance-exploding (alpha = 1, sigma = t) and
variance-preserving (alpha_t^2 + sigma_t^2 = 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

VE = "ve"
VP = "vp"
TIME_LAWS = ("log-uniform", "uniform")


@dataclass(frozen=True)
class Schedule:
    kind: str = VE
    t_min: float = 0.01
    t_max: float = 3.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    time_law: str = "log-uniform"

    def __post_init__(self):
        if self.kind not in (VE, VP):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (0.0 < self.t_min < self.t_max):
            raise ValueError("need 0 < t_min < t_max")
        if self.time_law not in TIME_LAWS:
            raise ValueError(f"unknown time law {self.time_law!r}")
        if self.kind == VP and not (0.0 < self.beta_min < self.beta_max):
            raise ValueError("VP schedule needs 0 < beta_min < beta_max")

    def alpha_sigma(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Kernel coefficients, vectorized over t (no range check)."""
        t = np.asarray(t, dtype=float)
        if self.kind == VE:
            return np.ones_like(t), t.copy()
        alpha = np.exp(-0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min)
        sigma = np.sqrt(1.0 - alpha * alpha)
        return alpha, sigma


@dataclass(frozen=True)
class NoisySample:
    """A perturbed point with its provenance: x_t = alpha_t x0 + sigma_t xi."""

    x_t: np.ndarray
    t: float
    x0: np.ndarray
    xi: np.ndarray


def schedule_at(sched: Schedule, t: float) -> tuple[float, float]:
    """(alpha_t, sigma_t) at a scalar time inside the schedule range."""
    if not sched.t_min <= t <= sched.t_max:
        raise ValueError(f"t={t} outside schedule range [{sched.t_min}, {sched.t_max}]")
    alpha, sigma = sched.alpha_sigma(float(t))
    return float(alpha), float(sigma)


def perturb(sched: Schedule, x0: np.ndarray, t: float, xi: np.ndarray) -> NoisySample:
    """Apply the forward kernel at time t to one clean sample."""
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x0.shape != xi.shape:
        raise ShapeError(f"x0 shape {x0.shape} != xi shape {xi.shape}")
    alpha, sigma = schedule_at(sched, t)
    return NoisySample(x_t=alpha * x0 + sigma * xi, t=float(t), x0=x0, xi=xi)


def perturb_batch(sched: Schedule, x0: np.ndarray, t: np.ndarray,
                  xi: np.ndarray) -> np.ndarray:
    """Vectorized kernel: x0, xi of shape (n, d), t of shape (n,)."""
    if x0.shape != xi.shape:
        raise ShapeError(f"x0 shape {x0.shape} != xi shape {xi.shape}")
    alpha, sigma = sched.alpha_sigma(t)
    return alpha[:, None] * x0 + sigma[:, None] * xi


def sample_time(sched: Schedule, rng: np.random.Generator, n: int | None = None):
    """Draw training times from the configured law (default log-uniform)."""
    size = 1 if n is None else n
    if sched.time_law == "uniform":
        t = rng.uniform(sched.t_min, sched.t_max, size=size)
    else:
        t = np.exp(rng.uniform(np.log(sched.t_min), np.log(sched.t_max), size=size))
    return float(t[0]) if n is None else t


def time_weight(name: str):
    """Named scalar weightings over timesteps for the training gradient."""
    if name == "one":
        return lambda t, alpha, sigma: np.ones_like(np.asarray(t, dtype=float))
    if name == "sigma2_alpha":
        return lambda t, alpha, sigma: sigma * sigma * alpha
    raise ValueError(f"unknown time weighting {name!r}")

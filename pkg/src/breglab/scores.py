"""Denoising score matching and score providers.

A score provider exposes the gradient of the log noisy marginal at (x, t).
It is exact for mixture teachers and affine students, or learned: a net
trained on the denoising objective — predict s(x_t, t) for
x_t = alpha x0 + sigma xi and minimize ||sigma s + xi||^2 per sample,
whose functional minimizer is the true marginal score.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .analytic import GaussianMixture, AffineGenerator, affine_density, marginal_score
from .diffusion import Schedule, perturb_batch, sample_time
from .errors import NumericError
from .nn import DenseNet, N_TIME_FEATURES, init_net, net_apply, net_gradients, with_time
from .optim import AdamState, adam_init, adam_update

SCORE_HIDDEN = (128, 128)

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class ScoreProvider:
    """Score field s(x, t) tagged with its origin.

    kind is "analytic-teacher", "analytic-student", or "learned"; the
    schedule is carried so evaluations can reject out-of-range times.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str
    dim: int
    sched: Schedule

    def __call__(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        if np.any(t < self.sched.t_min) or np.any(t > self.sched.t_max):
            raise ValueError(
                f"t outside schedule range [{self.sched.t_min}, {self.sched.t_max}]")
        return self.fn(x, t)


def score_at(provider: ScoreProvider, x: np.ndarray, t) -> np.ndarray:
    return provider(x, t)


def analytic_score(gm: GaussianMixture, sched: Schedule, role: str = "teacher") -> ScoreProvider:
    """Exact marginal score of a mixture, for either distribution role."""
    if role not in ("teacher", "student"):
        raise ValueError("role must be 'teacher' or 'student'")

    def fn(x, t):
        return marginal_score(gm, sched, x, t)

    return ScoreProvider(fn=fn, kind=f"analytic-{role}", dim=gm.dim, sched=sched)


def affine_score(gen: AffineGenerator, sched: Schedule) -> ScoreProvider:
    """Exact student score for an affine generator's pushforward."""
    return analytic_score(affine_density(gen), sched, role="student")


def net_score(net: DenseNet, dim: int, sched: Schedule) -> ScoreProvider:
    def fn(x, t):
        return net_apply(net, with_time(x, t))

    return ScoreProvider(fn=fn, kind="learned", dim=dim, sched=sched)


def init_score_net(dim: int, rng: np.random.Generator,
                   hidden: tuple[int, ...] = SCORE_HIDDEN) -> DenseNet:
    widths = [dim + N_TIME_FEATURES, *hidden, dim]
    return init_net(widths, rng)


def dsm_loss(net: DenseNet, x0: np.ndarray, sched: Schedule,
             rng: Optional[np.random.Generator] = None,
             t: Optional[np.ndarray] = None,
             xi: Optional[np.ndarray] = None) -> tuple[float, list[np.ndarray]]:
    """Denoising loss and parameter gradients on one clean batch.

    Per sample: draw (t, xi) unless supplied, form x_t, and take the
    sigma^2-weighted residual ||sigma s(x_t, t) + xi||^2; the returned loss
    is its batch mean, summed over dimensions.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if t is None:
        t = sample_time(sched, rng, n)
    if xi is None:
        xi = rng.standard_normal(x0.shape)
    _, sigma = sched.alpha_sigma(t)
    x_t = perturb_batch(sched, x0, t, xi)

    feats = with_time(x_t, t)
    pred = net_apply(net, feats)
    resid = sigma[:, None] * pred + xi
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    upstream = (2.0 / n) * sigma[:, None] * resid
    grads, _ = net_gradients(net, feats, upstream)
    return loss, grads


def dsm_step(net: DenseNet, opt: AdamState, sched: Schedule, x0: np.ndarray,
             rng: np.random.Generator,
             t_fixed: Optional[float] = None) -> tuple[DenseNet, AdamState, float]:
    """One denoising update on a fresh noise draw."""
    n = np.atleast_2d(x0).shape[0]
    t = None if t_fixed is None else np.full(n, float(t_fixed))
    loss, grads = dsm_loss(net, x0, sched, rng, t=t)
    new_opt, new_params = adam_update(opt, net.params(), grads)
    return net.with_params(new_params), new_opt, loss


def fit_score(net: DenseNet, draw: Sampler, sched: Schedule, steps: int,
              rng: np.random.Generator, batch: int = 256,
              lr: float = 1e-3) -> tuple[ScoreProvider, DenseNet, list[float]]:
    """Train a score net on freshly drawn clean batches.

    Returns (learned provider, trained net, per-step loss trace).
    """
    if steps < 1:
        raise ValueError("need steps >= 1")
    opt = adam_init(net.params(), lr=lr)
    decay_from = int(steps * 0.6)
    trace = []
    for step in range(steps):
        if step >= decay_from:
            # Anneal to zero over the tail; see fit_classifier.
            opt.lr = lr * (steps - step) / max(steps - decay_from, 1)
        x0 = draw(rng, batch)
        net, opt, loss = dsm_step(net, opt, sched, x0, rng)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite denoising loss at step {step}")
        trace.append(loss)
    dim = net.widths[-1]
    return net_score(net, dim, sched), net, trace


def probe_box(dim: int, lo: float = -2.0, hi: float = 2.0, n: int = 41) -> np.ndarray:
    """Evaluation grid for score-fidelity checks: a line in 1D, a lattice in 2D."""
    axis = np.linspace(lo, hi, n)
    if dim == 1:
        return axis[:, None]
    if dim == 2:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)
    raise ValueError("probe box supports dimensions 1 and 2")


def score_rms_error(provider: ScoreProvider, gm: GaussianMixture, sched: Schedule,
                    ts=(0.1, 0.5, 1.0), lo: float = -2.0, hi: float = 2.0,
                    n: int = 41) -> float:
    """RMS gap to the exact marginal score over the probe box and times."""
    pts = probe_box(gm.dim, lo, hi, n if gm.dim == 1 else 21)
    errs = []
    for t in ts:
        got = provider(pts, t)
        want = marginal_score(gm, sched, pts, np.full(pts.shape[0], float(t)))
        errs.append(np.sum((got - want) ** 2, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(errs))))


def dsm_optimum(gm: GaussianMixture, sched: Schedule, n_t: int = 20001) -> float:
    """Closed-form minimum of the denoising objective for an isotropic
    single-Gaussian data law, averaged over the configured time law.

    Per dimension the minimal residual power at time t is
    alpha^2 s0^2 / (alpha^2 s0^2 + sigma^2); the optimum is d times its
    average under the time distribution.
    """
    if gm.n_components != 1:
        raise ValueError("closed form requires a single-component data law")
    cov = gm.covs[0]
    s0_sq = float(cov[0, 0])
    if not np.allclose(cov, s0_sq * np.eye(gm.dim)):
        raise ValueError("closed form requires an isotropic covariance")
    if sched.time_law == "log-uniform":
        grid = np.geomspace(sched.t_min, sched.t_max, n_t)
        measure = np.log(grid)
    else:
        grid = np.linspace(sched.t_min, sched.t_max, n_t)
        measure = grid
    alpha, sigma = sched.alpha_sigma(grid)
    a2 = alpha * alpha
    vals = a2 * s0_sq / (a2 * s0_sq + sigma * sigma)
    avg = float(np.trapezoid(vals, measure) / (measure[-1] - measure[0]))
    return gm.dim * avg

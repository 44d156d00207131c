"""Closed-form teacher and student families.

Gaussian mixtures provide the teacher density with exact noisy marginals
and scores; affine generators provide a student whose pushforward density,
and hence the student/teacher density ratio, is exact at every noise level.
These closed forms are the ground truth behind every oracle in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffusion import Schedule, schedule_at
from .errors import DegenerateGeneratorError, ShapeError

LOG_2PI = np.log(2.0 * np.pi)

# Ratios are clamped to this window before entering weight computations;
# the bound sits far outside any oracle probe region.
RATIO_CLAMP_LOG = 30.0


def _inv_logdet(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and log-determinant for stacked 1x1 or 2x2 SPD matrices."""
    d = cov.shape[-1]
    if d == 1:
        det = cov[..., 0, 0]
        inv = 1.0 / det
        return inv[..., None, None], np.log(det)
    if d == 2:
        a, b = cov[..., 0, 0], cov[..., 0, 1]
        c, e = cov[..., 1, 0], cov[..., 1, 1]
        det = a * e - b * c
        inv = np.empty_like(cov)
        inv[..., 0, 0] = e
        inv[..., 0, 1] = -b
        inv[..., 1, 0] = -c
        inv[..., 1, 1] = a
        inv /= det[..., None, None]
        return inv, np.log(det)
    raise ValueError("only dimensions 1 and 2 are supported")


def _log_normal(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """log N(x; mean, cov) with broadcastable stacked arguments."""
    inv, logdet = _inv_logdet(cov)
    delta = x - mean
    quad = np.einsum("...i,...ij,...j->...", delta, inv, delta)
    d = x.shape[-1]
    return -0.5 * (quad + logdet + d * LOG_2PI)


@dataclass
class GaussianMixture:
    """Mixture of full-covariance Gaussians in dimension 1 or 2."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)
        if self.means.ndim != 2:
            raise ShapeError("means must have shape (K, d)")
        k, d = self.means.shape
        if d not in (1, 2):
            raise ValueError("mixture dimension must be 1 or 2")
        if self.weights.shape != (k,) or self.covs.shape != (k, d, d):
            raise ShapeError("weights / covs shapes do not match means")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("component weights must be positive and sum to 1 within 1e-12")
        if not np.allclose(self.covs, np.swapaxes(self.covs, -1, -2)):
            raise ValueError("covariances must be symmetric")
        for s in self.covs:
            if np.any(np.linalg.eigvalsh(s) <= 0):
                raise ValueError("covariances must be positive definite")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.covs)


def gaussian(mean, cov) -> GaussianMixture:
    """Single-component mixture helper."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov[None, None]
    return GaussianMixture(weights=np.array([1.0]), means=mean[None, :], covs=cov[None, :, :])


def _component_log_terms(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """log(w_k) + log N(x; mu_k, Sigma_k), shape (n, K)."""
    xn = x[:, None, :]
    logs = _log_normal(xn, gm.means[None, :, :], gm.covs[None, :, :])
    return np.log(gm.weights)[None, :] + logs


def _as_points(gm_dim: int, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != gm_dim:
        raise ShapeError(f"points must have dimension {gm_dim}, got shape {x.shape}")
    return x, single


def gm_log_density(gm: GaussianMixture, x: np.ndarray):
    """Log mixture density; stable via max-shift over component log-terms."""
    pts, single = _as_points(gm.dim, x)
    terms = _component_log_terms(gm, pts)
    m = terms.max(axis=1)
    out = m + np.log(np.exp(terms - m[:, None]).sum(axis=1))
    return float(out[0]) if single else out


def gm_score(gm: GaussianMixture, x: np.ndarray):
    """Exact gradient of the log density (responsibility-weighted scores)."""
    pts, single = _as_points(gm.dim, x)
    terms = _component_log_terms(gm, pts)
    m = terms.max(axis=1, keepdims=True)
    resp = np.exp(terms - m)
    resp /= resp.sum(axis=1, keepdims=True)
    inv, _ = _inv_logdet(gm.covs)
    comp_scores = -np.einsum("kij,nkj->nki", inv, pts[:, None, :] - gm.means[None, :, :])
    out = (resp[:, :, None] * comp_scores).sum(axis=1)
    return out[0] if single else out


def gm_responsibilities(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Posterior component membership probabilities, shape (n, K)."""
    pts, _ = _as_points(gm.dim, x)
    terms = _component_log_terms(gm, pts)
    m = terms.max(axis=1, keepdims=True)
    resp = np.exp(terms - m)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def gm_marginal(gm: GaussianMixture, sched: Schedule, t: float) -> GaussianMixture:
    """Noisy marginal at time t: component k maps to
    N(alpha_t mu_k, alpha_t^2 Sigma_k + sigma_t^2 I)."""
    alpha, sigma = schedule_at(sched, t)
    eye = np.eye(gm.dim)
    return GaussianMixture(
        weights=gm.weights.copy(),
        means=alpha * gm.means,
        covs=alpha * alpha * gm.covs + sigma * sigma * eye[None, :, :],
    )


def gm_sample(gm: GaussianMixture, rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. draws, shape (n, d)."""
    if n < 1:
        raise ValueError("need n >= 1")
    comp = rng.choice(gm.n_components, size=n, p=gm.weights)
    z = rng.standard_normal((n, gm.dim))
    chol = gm.cholesky()
    return gm.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


def _marginal_params(gm: GaussianMixture, sched: Schedule, t: np.ndarray):
    """Per-sample-time marginal means (n, K, d) and covariances (n, K, d, d)."""
    alpha, sigma = sched.alpha_sigma(t)
    eye = np.eye(gm.dim)
    means = alpha[:, None, None] * gm.means[None, :, :]
    covs = (alpha ** 2)[:, None, None, None] * gm.covs[None, :, :, :] \
        + (sigma ** 2)[:, None, None, None] * eye[None, None, :, :]
    return means, covs


def _broadcast_t(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.full(n, float(t))
    if t.shape != (n,):
        raise ShapeError(f"t must be scalar or shape ({n},), got {t.shape}")
    return t


def marginal_log_density(gm: GaussianMixture, sched: Schedule, x: np.ndarray, t) -> np.ndarray:
    """log p_t(x) with a per-sample time vector (or scalar t)."""
    pts, single = _as_points(gm.dim, x)
    tv = _broadcast_t(t, pts.shape[0])
    means, covs = _marginal_params(gm, sched, tv)
    terms = np.log(gm.weights)[None, :] + _log_normal(pts[:, None, :], means, covs)
    m = terms.max(axis=1)
    out = m + np.log(np.exp(terms - m[:, None]).sum(axis=1))
    return float(out[0]) if single else out


def marginal_score(gm: GaussianMixture, sched: Schedule, x: np.ndarray, t) -> np.ndarray:
    """Score of the noisy marginal with per-sample times."""
    pts, single = _as_points(gm.dim, x)
    tv = _broadcast_t(t, pts.shape[0])
    means, covs = _marginal_params(gm, sched, tv)
    terms = np.log(gm.weights)[None, :] + _log_normal(pts[:, None, :], means, covs)
    m = terms.max(axis=1, keepdims=True)
    resp = np.exp(terms - m)
    resp /= resp.sum(axis=1, keepdims=True)
    inv, _ = _inv_logdet(covs)
    comp_scores = -np.einsum("nkij,nkj->nki", inv, pts[:, None, :] - means)
    out = (resp[:, :, None] * comp_scores).sum(axis=1)
    return out[0] if single else out


@dataclass
class AffineGenerator:
    """One-step map eps -> A eps + b with eps ~ N(0, I)."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        d = self.offset.shape[0]
        if self.matrix.shape != (d, d):
            raise ShapeError(f"matrix shape {self.matrix.shape} != ({d}, {d})")
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise DegenerateGeneratorError("generator matrix is rank deficient")

    @property
    def dim(self) -> int:
        return self.offset.shape[0]

    def apply(self, eps: np.ndarray) -> np.ndarray:
        eps = np.asarray(eps, dtype=float)
        return eps @ self.matrix.T + self.offset

    def pullback(self, eps: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients of sum_i <upstream_i, apply(eps_i)>: [dA, db]."""
        if eps.shape != upstream.shape:
            raise ShapeError("eps and upstream shapes differ")
        return [upstream.T @ eps, upstream.sum(axis=0)]

    def params(self) -> list[np.ndarray]:
        return [self.matrix, self.offset]

    def set_params(self, params: list[np.ndarray]) -> None:
        self.matrix = params[0]
        self.offset = params[1]

    def with_params(self, params: list[np.ndarray]) -> "AffineGenerator":
        return AffineGenerator(matrix=params[0], offset=params[1])


def affine_density(gen: AffineGenerator) -> GaussianMixture:
    """Exact pushforward of the standard-normal prior: N(b, A A^T)."""
    return gaussian(gen.offset, gen.matrix @ gen.matrix.T)


def affine_pushforward(gen: AffineGenerator, sched: Schedule, t: float) -> GaussianMixture:
    """Noisy student marginal N(alpha_t b, alpha_t^2 A A^T + sigma_t^2 I)."""
    return gm_marginal(affine_density(gen), sched, t)


def affine_sample(gen: AffineGenerator, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need n >= 1")
    return gen.apply(rng.standard_normal((n, gen.dim)))


def sample(source, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n points from a mixture or an affine generator."""
    if isinstance(source, GaussianMixture):
        return gm_sample(source, rng, n)
    if isinstance(source, AffineGenerator):
        return affine_sample(source, rng, n)
    raise TypeError(f"cannot sample from {type(source).__name__}")


def two_mode_teacher() -> GaussianMixture:
    """Default toy teacher: equal two-component 2D mixture at (+-1.5, 0)
    with covariance 0.8 I — bimodal (the modes sit 3.4 component sigmas
    apart, density between them dips to a quarter of the peaks) while
    keeping the whole [-2, 2]^2 probe box inside the region the data
    actually visits, so learned scores are testable everywhere on it."""
    eye = np.eye(2)
    return GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.array([[1.5, 0.0], [-1.5, 0.0]]),
        covs=np.stack([0.8 * eye, 0.8 * eye]),
    )


@dataclass
class RatioField:
    """Student/teacher density ratio r_t(x) as an evaluable field.

    fn maps (points (n, d), times (n,)) to ratios (n,).  For fields built
    at a single noise level, t_fixed records it and support carries the
    student marginal there (used for quadrature coverage checks).
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    provenance: str
    dim: int
    t_fixed: Optional[float] = None
    support: Optional[GaussianMixture] = None

    def __call__(self, x: np.ndarray, t=None) -> np.ndarray:
        pts, single = _as_points(self.dim, x)
        if t is None:
            if self.t_fixed is None:
                raise ValueError("this ratio field needs explicit times")
            t = self.t_fixed
        tv = _broadcast_t(t, pts.shape[0])
        out = np.asarray(self.fn(pts, tv), dtype=float)
        return float(out[0]) if single else out


def analytic_ratio(teacher: GaussianMixture, gen: AffineGenerator, sched: Schedule,
                   t: float | None = None) -> RatioField:
    """Exact ratio field q_t/p_t for an affine student against a mixture teacher."""
    if teacher.dim != gen.dim:
        raise ShapeError("teacher and generator dimensions differ")
    student = affine_density(gen)

    def fn(pts: np.ndarray, tv: np.ndarray) -> np.ndarray:
        log_q = marginal_log_density(student, sched, pts, tv)
        log_p = marginal_log_density(teacher, sched, pts, tv)
        return np.exp(log_q - log_p)

    support = gm_marginal(student, sched, t) if t is not None else None
    return RatioField(fn=fn, provenance="analytic", dim=gen.dim, t_fixed=t, support=support)


def clamp_ratio(r: np.ndarray) -> np.ndarray:
    """Clamp ratios to [e^-30, e^30] before they enter weight computations."""
    lo, hi = np.exp(-RATIO_CLAMP_LOG), np.exp(RATIO_CLAMP_LOG)
    return np.clip(r, lo, hi)

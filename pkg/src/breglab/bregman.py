"""Convex functions, their ratio weights, and Bregman divergences.

Each instance packages a strictly convex h on (0, inf) with closed-form
derivatives, the gradient weight w(r) = h''(r) * r, and the same weight in
classifier-logit coordinates, w(e^-l).  Divergences against a reference
ratio are evaluated by per-component Gauss-Hermite quadrature over the
base mixture, with an inflation ladder that widens the node cloud until
declared support hints are covered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .analytic import GaussianMixture, RatioField, clamp_ratio, RATIO_CLAMP_LOG
from .errors import CoverageError
from .nn import sigmoid
from .quadrature import QuadratureRule, hermite_rule, tensor_grid

CANONICAL_NAMES = ("lr", "kl", "be", "ls", "sba")

# Inflation ladder for quadrature coverage: multiply node spread by steps
# of this factor until support hints are covered, up to the hard cap.
INFLATION_STEP = 1.25
INFLATION_CAP = 16.0
TAIL_TOLERANCE = 1e-6

DEFAULT_NODES = 60


@dataclass(frozen=True)
class ConvexFunction:
    """Strictly convex h with closed-form derivatives and weights.

    weight(r) equals h''(r) * r and logit_weight(l) equals weight(e^-l),
    both in closed form per instance so the training path never touches h
    itself.
    """

    name: str
    h: Callable[[np.ndarray], np.ndarray]
    h_prime: Callable[[np.ndarray], np.ndarray]
    h_second: Callable[[np.ndarray], np.ndarray]
    weight: Callable[[np.ndarray], np.ndarray]
    logit_weight: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def label(self) -> str:
        if self.name == "sba":
            return f"sba({self.params['lam']:g})"
        return self.name


def _clip_logit(l: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(l, dtype=float), -RATIO_CLAMP_LOG, RATIO_CLAMP_LOG)


def _lr_instance() -> ConvexFunction:
    def h(r):
        r = np.asarray(r, dtype=float)
        return r * (np.log(r) - np.log1p(r)) - np.log1p(r)

    def h_prime(r):
        r = np.asarray(r, dtype=float)
        return np.log(r) - np.log1p(r)

    def h_second(r):
        r = np.asarray(r, dtype=float)
        return 1.0 / (r * (1.0 + r))

    def weight(r):
        return 1.0 / (1.0 + np.asarray(r, dtype=float))

    def logit_weight(l):
        return sigmoid(_clip_logit(l))

    return ConvexFunction("lr", h, h_prime, h_second, weight, logit_weight)


def _kl_instance() -> ConvexFunction:
    def h(r):
        r = np.asarray(r, dtype=float)
        return r * np.log(r) - r

    def h_prime(r):
        return np.log(np.asarray(r, dtype=float))

    def h_second(r):
        return 1.0 / np.asarray(r, dtype=float)

    def weight(r):
        # Identically 1, returned without touching the values of r, so
        # downstream products with this weight are exact no-ops.
        return np.ones_like(np.asarray(r, dtype=float))

    def logit_weight(l):
        return np.ones_like(np.asarray(l, dtype=float))

    return ConvexFunction("kl", h, h_prime, h_second, weight, logit_weight)


def _be_instance() -> ConvexFunction:
    def h(r):
        return -np.log(np.asarray(r, dtype=float))

    def h_prime(r):
        return -1.0 / np.asarray(r, dtype=float)

    def h_second(r):
        r = np.asarray(r, dtype=float)
        return 1.0 / (r * r)

    def weight(r):
        return 1.0 / np.asarray(r, dtype=float)

    def logit_weight(l):
        return np.exp(_clip_logit(l))

    return ConvexFunction("be", h, h_prime, h_second, weight, logit_weight)


def _ls_instance() -> ConvexFunction:
    def h(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * r * r

    def h_prime(r):
        return np.asarray(r, dtype=float).copy()

    def h_second(r):
        return np.ones_like(np.asarray(r, dtype=float))

    def weight(r):
        return np.asarray(r, dtype=float).copy()

    def logit_weight(l):
        return np.exp(-_clip_logit(l))

    return ConvexFunction("ls", h, h_prime, h_second, weight, logit_weight)


def _sba_instance(lam: float) -> ConvexFunction:
    denom = lam * (lam + 1.0)

    def h(r):
        r = np.asarray(r, dtype=float)
        return (np.power(r, 1.0 + lam) - r) / denom

    def h_prime(r):
        r = np.asarray(r, dtype=float)
        return ((1.0 + lam) * np.power(r, lam) - 1.0) / denom

    def h_second(r):
        return np.power(np.asarray(r, dtype=float), lam - 1.0)

    def weight(r):
        return np.power(np.asarray(r, dtype=float), lam)

    def logit_weight(l):
        return np.exp(-lam * _clip_logit(l))

    return ConvexFunction("sba", h, h_prime, h_second, weight, logit_weight,
                          params={"lam": lam})


def _reject_params(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"{name} takes no parameters")


def make_instance(name: str, **params) -> ConvexFunction:
    """Build a registry instance by name.

    "sba" requires lam.  lam=0 returns the kl instance outright (the power
    family degenerates to it); tiny nonzero |lam| is rejected because the
    definition divides by lam*(lam+1), and lam=-1 is rejected since that
    endpoint is the be instance, which has its own entry.
    """
    name = name.lower()
    if name == "lr":
        _reject_params(name, params)
        return _lr_instance()
    if name == "kl":
        _reject_params(name, params)
        return _kl_instance()
    if name == "be":
        _reject_params(name, params)
        return _be_instance()
    if name == "ls":
        _reject_params(name, params)
        return _ls_instance()
    if name == "sba":
        if set(params) != {"lam"}:
            raise ValueError("sba takes exactly one parameter: lam")
        lam = float(params["lam"])
        if lam == 0.0:
            return _kl_instance()
        if abs(lam) <= 1e-6:
            raise ValueError("sba lam is near-singular (the definition divides "
                             "by lam*(lam+1)); use lam=0 for the kl limit")
        if lam == -1.0:
            raise ValueError("sba with lam=-1 is the be instance; use name 'be'")
        if abs(lam + 1.0) <= 1e-6:
            raise ValueError("sba lam is near-singular (the definition divides "
                             "by lam*(lam+1)); use the be instance for the lam=-1 limit")
        return _sba_instance(lam)
    raise ValueError(f"unknown instance name {name!r}; known: {CANONICAL_NAMES}")


def parse_instance(label: str) -> ConvexFunction:
    """Parse labels like "kl" or "sba(0.5)" into instances."""
    label = label.strip().lower()
    if label.startswith("sba(") and label.endswith(")"):
        return make_instance("sba", lam=float(label[4:-1]))
    return make_instance(label)


def weight(cf: ConvexFunction, r) -> np.ndarray:
    """h''(r) * r with the domain guard; callers on hot paths clamp first
    and use cf.weight directly."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("weight requires r > 0")
    return cf.weight(r)


def logit_weight(cf: ConvexFunction, l) -> np.ndarray:
    """The same weight evaluated at r = e^-l."""
    return cf.logit_weight(np.asarray(l, dtype=float))


_PROBE_RATIOS = np.geomspace(0.1, 10.0, 25)


def custom_instance(name: str, h: Callable, weight: Optional[Callable] = None,
                    logit_weight: Optional[Callable] = None,
                    h_prime: Optional[Callable] = None,
                    h_second: Optional[Callable] = None) -> ConvexFunction:
    """Wrap a user-supplied convex function, deriving missing pieces.

    Convexity is probed by central second differences on a log-spaced
    ratio grid in [0.1, 10]; a supplied weight must match h''(r) * r on
    the same grid.
    """
    def fd_second(r: float) -> float:
        step = 1e-4 * r
        return (float(h(r + step)) - 2.0 * float(h(r)) + float(h(r - step))) / (step * step)

    for r in _PROBE_RATIOS:
        curv = fd_second(float(r))
        if not np.isfinite(curv) or curv <= 0:
            raise ValueError(f"h is not strictly convex near r={r:.4g}")
        if weight is not None:
            w = float(np.asarray(weight(np.array([r])))[0])
            ref = curv * r
            if abs(w - ref) > 1e-4 * max(1.0, abs(ref)):
                raise ValueError(f"weight({r:.4g}) disagrees with h''(r) * r")

    if h_second is None:
        def h_second(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            return np.array([fd_second(float(v)) for v in r])

    if weight is None:
        def weight(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            return np.asarray(h_second(r), dtype=float) * r

    if logit_weight is None:
        def logit_weight(l):
            return weight(np.exp(-_clip_logit(l)))

    if h_prime is None:
        def h_prime(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            step = 1e-6 * np.maximum(r, 1e-3)
            return np.array([(float(h(v + s)) - float(h(v - s))) / (2.0 * s)
                             for v, s in zip(r, step)])

    return ConvexFunction(name, h, h_prime, h_second, weight, logit_weight,
                          params={"custom": True})


# -- quadrature over mixtures -------------------------------------------------

def _phi_tail(z: float) -> float:
    """P(Z > z) for standard normal Z."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _hint_tail_mass(mean: np.ndarray, cov: np.ndarray, center: np.ndarray,
                    scaled_chol: np.ndarray, z_max: float) -> float:
    """Upper bound on hint mass outside the node box of one component frame.

    The hint N(mean, cov) is mapped through the inverse of the (inflated)
    component transform; a union bound over axes of the mapped Gaussian
    gives the escaping mass.
    """
    d = mean.shape[0]
    inv = np.linalg.inv(scaled_chol)
    m = inv @ (mean - center)
    s = inv @ cov @ inv.T
    total = 0.0
    for a in range(d):
        sd = math.sqrt(max(s[a, a], 1e-300))
        total += _phi_tail((z_max - m[a]) / sd)
        total += _phi_tail((z_max + m[a]) / sd)
    return total


def mixture_expect(base: GaussianMixture, fn: Callable[[np.ndarray], np.ndarray],
                   rule: Optional[QuadratureRule] = None,
                   supports: tuple[GaussianMixture, ...] = (),
                   tail_tol: float = TAIL_TOLERANCE) -> float:
    """E_base[fn] by per-component Gauss-Hermite quadrature.

    Each component integrates in its own whitened frame.  When support
    hints are declared, the node spread is inflated in fixed ladder steps
    until every hint component keeps all but tail_tol of its mass inside
    the node box; exceeding the inflation cap raises CoverageError.
    Inflation is compensated by exact density reweighting, so the result
    still targets the base measure.
    """
    if rule is None:
        rule = hermite_rule(DEFAULT_NODES)
    d = base.dim
    if d == 1:
        z_nodes, z_weights = rule.nodes[:, None], rule.weights
    else:
        z_nodes, z_weights = tensor_grid(rule, d)
    z_max = float(rule.nodes.max())
    sq_norm = (z_nodes ** 2).sum(axis=1)
    chols = base.cholesky()

    total = 0.0
    for k in range(base.n_components):
        chol = chols[k]
        center = base.means[k]
        scale = 1.0
        if supports:
            while True:
                worst = 0.0
                for hint in supports:
                    for j in range(hint.n_components):
                        worst = max(worst, _hint_tail_mass(
                            hint.means[j], hint.covs[j], center, scale * chol, z_max))
                if worst <= tail_tol:
                    break
                scale *= INFLATION_STEP
                if scale > INFLATION_CAP:
                    raise CoverageError(
                        f"support tail mass {worst:.3e} > {tail_tol:.1e} outside the "
                        f"node range of component {k} at the inflation cap")
        pts = center + (z_nodes * scale) @ chol.T
        vals = np.asarray(fn(pts), dtype=float)
        if scale == 1.0:
            contrib = float(z_weights @ vals)
        else:
            correction = scale ** d * np.exp(-0.5 * (scale * scale - 1.0) * sq_norm)
            contrib = float(z_weights @ (correction * vals))
        total += base.weights[k] * contrib
    return total


def _field_supports(*fields) -> tuple[GaussianMixture, ...]:
    out = []
    for f in fields:
        if isinstance(f, RatioField) and f.support is not None:
            out.append(f.support)
    return tuple(out)


def _eval_ratio(ratio, pts: np.ndarray) -> np.ndarray:
    return clamp_ratio(np.asarray(ratio(pts), dtype=float))


def divergence(cf: ConvexFunction, ratio, ref, base: GaussianMixture,
               rule: Optional[QuadratureRule] = None) -> float:
    """Bregman divergence E_base[h(r) - h(r*) - h'(r*)(r - r*)] at fixed t."""
    supports = _field_supports(ratio, ref)

    def integrand(pts):
        r = _eval_ratio(ratio, pts)
        rs = _eval_ratio(ref, pts)
        return cf.h(r) - cf.h(rs) - cf.h_prime(rs) * (r - rs)

    return mixture_expect(base, integrand, rule=rule, supports=supports)


def divergence_to_one(cf: ConvexFunction, ratio, base: GaussianMixture,
                      rule: Optional[QuadratureRule] = None) -> float:
    """Bregman divergence of a ratio field against the constant ratio 1 —
    the distillation objective at fixed t."""
    h1 = float(np.asarray(cf.h(1.0)))
    hp1 = float(np.asarray(cf.h_prime(1.0)))
    supports = _field_supports(ratio)

    def integrand(pts):
        r = _eval_ratio(ratio, pts)
        return cf.h(r) - h1 - hp1 * (r - 1.0)

    return mixture_expect(base, integrand, rule=rule, supports=supports)

"""Quadrature rules for expectations against Gaussian and interval measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GH_KIND = "gauss-hermite"
UNIFORM_KIND = "uniform"


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a 1D quadrature rule.

    For the Gauss-Hermite kind the rule is normalized against the standard
    normal density: sum(weights) == 1 and sum(w * f(nodes)) approximates
    E_{z~N(0,1)}[f(z)].  For the uniform kind the weights are trapezoid
    weights on an interval and sum(w * f(nodes)) approximates the plain
    integral of f.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 1 or weights.ndim != 1 or nodes.size != weights.size:
            raise ValueError("nodes and weights must be 1D arrays of equal length")
        if nodes.size < 1:
            raise ValueError("rule needs at least one node")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if self.kind == GH_KIND and abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("gauss-hermite weights must sum to 1 within 1e-12")

    @property
    def n(self) -> int:
        return self.nodes.size


def hermite_rule(n: int) -> QuadratureRule:
    """Gauss-Hermite rule normalized to the standard normal weight.

    Exact for polynomial integrands of degree <= 2n-1 under N(0, 1).
    """
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= 200:
        raise ValueError(f"hermite_rule: n must be an integer in [1, 200], got {n!r}")
    x, w = np.polynomial.hermite.hermgauss(int(n))
    return QuadratureRule(nodes=x * np.sqrt(2.0), weights=w / np.sqrt(np.pi), kind=GH_KIND)


def uniform_rule(lo: float, hi: float, n: int) -> QuadratureRule:
    """Trapezoid rule on [lo, hi] with n nodes."""
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        raise ValueError("uniform_rule needs a finite interval with hi > lo")
    if n < 2:
        raise ValueError("uniform_rule needs n >= 2")
    nodes = np.linspace(lo, hi, int(n))
    h = (hi - lo) / (n - 1)
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2.0
    return QuadratureRule(nodes=nodes, weights=weights, kind=UNIFORM_KIND)


def tensor_grid(rule: QuadratureRule, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product nodes (m, dim) and combined weights (m,) of a 1D rule."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if dim == 1:
        return rule.nodes[:, None].copy(), rule.weights.copy()
    grids = np.meshgrid(*([rule.nodes] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = rule.weights
    for _ in range(dim - 1):
        weights = np.multiply.outer(weights, rule.weights)
    return nodes, weights.ravel()


def gauss_expect(rule: QuadratureRule, fn, mean: float = 0.0, std: float = 1.0) -> float:
    """E_{x~N(mean, std^2)}[fn(x)] for a normalized Gauss-Hermite rule."""
    if rule.kind != GH_KIND:
        raise ValueError("gauss_expect requires a gauss-hermite rule")
    return float(np.sum(rule.weights * fn(mean + std * rule.nodes)))

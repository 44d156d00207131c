"""Distribution-distance metrics at desk scale.

Sliced Wasserstein-2 and RBF-kernel MMD compare sample sets without any
feature extractor; mode coverage diagnoses whether a generator holds all
components of a mixture teacher.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .analytic import GaussianMixture, gm_responsibilities
from .errors import ShapeError

DEFAULT_PROJECTIONS = 128
DEFAULT_METRIC_SAMPLES = 10_000
_MMD_BLOCK = 1024
_BANDWIDTH_SUBSAMPLE = 512


@dataclass(frozen=True)
class SampleSet:
    """A labeled cloud of d-vectors."""

    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("sample set needs a nonempty (n, d) point array")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def as_sample_set(x, label: str = "") -> SampleSet:
    if isinstance(x, SampleSet):
        return x
    return SampleSet(points=np.asarray(x, dtype=float), label=label)


def save_sample_set(path, ss: SampleSet) -> None:
    """One point per row, full-precision decimal columns."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in ss.points:
            writer.writerow([repr(float(v)) for v in row])


def load_sample_set(path, label: str = "") -> SampleSet:
    with open(path, newline="") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    return SampleSet(points=np.asarray(rows, dtype=float), label=label)


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    sa, sb = as_sample_set(a), as_sample_set(b)
    if sa.dim != sb.dim:
        raise ShapeError(f"dimension mismatch: {sa.dim} vs {sb.dim}")
    return sa.points, sb.points


def _equalize(x: np.ndarray, y: np.ndarray,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Downsample the larger set (without replacement) to match sizes."""
    if x.shape[0] > y.shape[0]:
        idx = rng.choice(x.shape[0], size=y.shape[0], replace=False)
        x = x[np.sort(idx)]
    elif y.shape[0] > x.shape[0]:
        idx = rng.choice(y.shape[0], size=x.shape[0], replace=False)
        y = y[np.sort(idx)]
    return x, y


def sliced_wasserstein2(a, b, projections: int = DEFAULT_PROJECTIONS,
                        rng: np.random.Generator = None) -> float:
    """Root-mean over random unit projections of squared 1D Wasserstein-2
    between the sorted projected samples."""
    x, y = _paired(a, b)
    if projections < 1:
        raise ValueError("need projections >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    x, y = _equalize(x, y, rng)
    d = x.shape[1]
    dirs = rng.standard_normal((d, projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    px = np.sort(x @ dirs, axis=0)
    py = np.sort(y @ dirs, axis=0)
    w2_sq = np.mean((px - py) ** 2, axis=0)
    return float(np.sqrt(np.mean(w2_sq)))


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over a deterministic strided subsample."""
    z = np.concatenate([x, y], axis=0)
    if z.shape[0] > _BANDWIDTH_SUBSAMPLE:
        stride = int(np.ceil(z.shape[0] / _BANDWIDTH_SUBSAMPLE))
        z = z[::stride]
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    d2 = np.maximum(d2, 0.0)
    vals = np.sqrt(d2[np.triu_indices(z.shape[0], k=1)])
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


def _mean_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """Mean RBF kernel over all pairs, evaluated in row blocks."""
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    sy = np.sum(y * y, axis=1)
    total = 0.0
    for start in range(0, x.shape[0], _MMD_BLOCK):
        xb = x[start:start + _MMD_BLOCK]
        d2 = np.sum(xb * xb, axis=1)[:, None] + sy[None, :] - 2.0 * (xb @ y.T)
        total += float(np.exp(-gamma * np.maximum(d2, 0.0)).sum())
    return total / (x.shape[0] * y.shape[0])


def mmd_rbf(a, b, bandwidth: float = None) -> float:
    """Biased V-statistic estimate of squared MMD with an RBF kernel.

    Non-negative by construction for identical sets; defaults to the
    median-distance bandwidth heuristic.
    """
    x, y = _paired(a, b)
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return (_mean_kernel(x, x, bandwidth) + _mean_kernel(y, y, bandwidth)
            - 2.0 * _mean_kernel(x, y, bandwidth))


def mode_coverage(samples, gm: GaussianMixture) -> np.ndarray:
    """Fraction of samples claimed by each component under maximum
    posterior responsibility; fractions sum to 1 exactly."""
    ss = as_sample_set(samples)
    if ss.dim != gm.dim:
        raise ShapeError(f"dimension mismatch: {ss.dim} vs {gm.dim}")
    resp = gm_responsibilities(gm, ss.points)
    assign = np.argmax(resp, axis=1)
    counts = np.bincount(assign, minlength=gm.n_components)
    fractions = counts / ss.n
    fractions[-1] = 1.0 - float(fractions[:-1].sum())
    return fractions

"""Self-contained oracle suite.

Every load-bearing identity in the package is checked here numerically,
before and independently of any training: the weighted score-difference
gradient against finite differences of the quadrature divergence, the
mass-normalization identity behind it, the registry table's closed-form
weights against finite differences of h, the exact reduction of the KL
weight to the plain score-difference path, and closed-form Gaussian
divergence values.  Checks report structured one-line records; negative
controls verify that each detector actually fires on a corrupted input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .analytic import (AffineGenerator, GaussianMixture, RatioField, analytic_ratio,
                       gaussian, gm_marginal, two_mode_teacher)
from .bregman import (ConvexFunction, divergence, divergence_to_one, make_instance,
                      mixture_expect, parse_instance)
from .classifier import init_classifier, ratio_from_classifier
from .diffusion import Schedule
from .distill import generator_gradient, init_mlp_generator, vsd_gradient
from .nn import init_net
from .quadrature import hermite_rule, tensor_grid
from .scores import affine_score, analytic_score, net_score

GRADIENT_INSTANCES = ("lr", "kl", "be", "ls", "sba(-0.5)", "sba(0.5)", "sba(3)", "sba(5)")
ORACLE_TIMES = (0.1, 0.5, 1.0)
GROUP_NAMES = ("table", "gradient", "mass", "kl", "closed_form")

# Gauss-Hermite resolution for expectation over (eps, xi): per-axis node
# counts for the 2-axis (1D data) and 4-axis (2D data) tensor grids.
# Convergence on the 2D mixture is limited by the complex zeros of the
# mixture density between the modes, so the steepest ratio powers at the
# smallest noise level get a denser grid.
EPS_XI_NODES = {1: 60, 2: 32}
EPS_XI_NODES_DENSE_2D = 48
FD_STEP = 1e-4


@dataclass(frozen=True)
class OracleReport:
    """One check outcome; passed must equal (value <= tol)."""

    check: str
    group: str
    value: float
    tol: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.passed != (self.value <= self.tol):
            raise ValueError(f"inconsistent report for {self.check}")

    def line(self) -> str:
        doc = {"check": self.check, "group": self.group, "value": self.value,
               "tol": self.tol, "pass": self.passed}
        if self.detail:
            doc["detail"] = self.detail
        return json.dumps(doc, sort_keys=True)


def report_from_line(line: str) -> OracleReport:
    doc = json.loads(line)
    return OracleReport(check=doc["check"], group=doc["group"], value=doc["value"],
                        tol=doc["tol"], passed=doc["pass"],
                        detail=doc.get("detail", {}))


def _report(check: str, group: str, value: float, tol: float, **detail) -> OracleReport:
    value = float(value)
    return OracleReport(check=check, group=group, value=value, tol=float(tol),
                        passed=bool(value <= tol), detail=detail)


# -- suite fixtures -----------------------------------------------------------

def oracle_schedule() -> Schedule:
    return Schedule()  # variance-exploding, t in [0.01, 3]


def oracle_cases() -> dict:
    """Teacher/generator pairs exercised by the gradient and mass checks.

    The 2D mixture has overlapping modes and the generator brackets the
    component variance from above within a factor 1.2.  That keeps the
    log-ratio bounded in both directions, so every weight in the family
    (from 1/r up to r^5, hence ratio powers up to r^6 inside the
    divergence) stays integrable and resolvable on fixed quadrature
    grids.  With well-separated modes no single affine student has that
    property: either r^6 loses integrability or 1/r concentrates mass at
    the far mode, outside any student-centred grid.
    """
    teacher_1d = gaussian(np.array([0.8]), np.array([[1.69]]))
    gen_1d = AffineGenerator(matrix=np.array([[1.1]]), offset=np.array([0.3]))
    teacher_2d = GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.array([[-1.0, 0.0], [1.0, 0.0]]),
        covs=np.array([np.eye(2) * 0.8, np.eye(2) * 0.8]))
    gen_2d = AffineGenerator(matrix=np.diag([0.93, 0.92]),
                             offset=np.array([0.1, 0.05]))
    return {"1d": (teacher_1d, gen_1d), "2d": (teacher_2d, gen_2d)}


def _theta(gen: AffineGenerator) -> np.ndarray:
    """Restricted parameter vector: diagonal of A, then b."""
    return np.concatenate([np.diag(gen.matrix), gen.offset])


def _gen_from_theta(theta: np.ndarray, dim: int) -> AffineGenerator:
    return AffineGenerator(matrix=np.diag(theta[:dim]), offset=theta[dim:].copy())


def _restrict(grads: list[np.ndarray]) -> np.ndarray:
    """Project [dA, db] onto the restricted (diag A, b) coordinates."""
    return np.concatenate([np.diag(grads[0]), grads[1]])


def fd_divergence_gradient(cf: ConvexFunction, teacher: GaussianMixture,
                           gen: AffineGenerator, sched: Schedule, t: float,
                           step: float = FD_STEP) -> np.ndarray:
    """Richardson-refined central differences of the quadrature divergence
    over the restricted generator parameters (diagonal of A, then b)."""
    if not 1e-6 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-6, 1e-3]")
    d = gen.dim
    theta0 = _theta(gen)

    def objective(theta: np.ndarray) -> float:
        g = _gen_from_theta(theta, d)
        ratio = analytic_ratio(teacher, g, sched, t)
        base = gm_marginal(teacher, sched, t)
        return divergence_to_one(cf, ratio, base)

    out = np.empty_like(theta0)
    for i in range(theta0.size):
        def central(h: float) -> float:
            tp, tm = theta0.copy(), theta0.copy()
            tp[i] += h
            tm[i] -= h
            return (objective(tp) - objective(tm)) / (2.0 * h)

        g1 = central(step)
        g2 = central(step / 2.0)
        out[i] = (4.0 * g2 - g1) / 3.0
    return out


def _default_nodes(d: int, cf: ConvexFunction, t: float) -> int:
    lam = float(cf.params.get("lam", 0.0)) if cf.params else 0.0
    if d == 2 and cf.name == "sba" and lam >= 3.0 and t < 0.5:
        return EPS_XI_NODES_DENSE_2D
    return EPS_XI_NODES[d]


def oracle_generator_gradient(cf: ConvexFunction, teacher: GaussianMixture,
                              gen: AffineGenerator, sched: Schedule, t: float,
                              nodes: Optional[int] = None) -> np.ndarray:
    """The production gradient estimator evaluated on a tensor-product
    Gauss-Hermite grid over (eps, xi) instead of Monte Carlo draws."""
    d = gen.dim
    if nodes is None:
        nodes = _default_nodes(d, cf, float(t))
    rule = hermite_rule(nodes)
    grid, weights = tensor_grid(rule, 2 * d)
    eps, xi = grid[:, :d], grid[:, d:]
    ratio = analytic_ratio(teacher, gen, sched)
    grads, _ = generator_gradient(
        gen, analytic_score(teacher, sched), affine_score(gen, sched), ratio,
        cf, sched, np.full(grid.shape[0], float(t)), eps, xi,
        wt=None, sample_weights=weights)
    return _restrict(grads)


# -- check groups -------------------------------------------------------------

_TABLE_R_GRID = np.round(np.arange(1, 101) * 0.1, 10)
_LOGIT_GRID = np.linspace(-10.0, 10.0, 201)


def _fd_h_prime(h: Callable, r: float) -> float:
    s = 1e-5 * max(1.0, r)
    return (float(h(r + s)) - float(h(r - s))) / (2.0 * s)


def _fd_h_second(h: Callable, r: float) -> float:
    # Step chosen where roundoff (eps*|h|/s^2) and truncation (h''''*s^2)
    # are both orders below the 1e-4 comparison tolerance on this grid.
    s = 3e-4 * max(1.0, r)
    return (float(h(r + s)) - 2.0 * float(h(r)) + float(h(r - s))) / (s * s)


def _rel(a: float, b: float, floor: float = 1e-300) -> float:
    return abs(a - b) / max(abs(b), floor)


def _table_reports_for(cf: ConvexFunction, label: str) -> list[OracleReport]:
    # h' vanishes at r=1 for several rows, so floor the denominator at 1.
    hp_err = max(_rel(_fd_h_prime(cf.h, float(r)), float(np.asarray(cf.h_prime(r))),
                      floor=1.0)
                 for r in _TABLE_R_GRID)
    w_err = max(_rel(_fd_h_second(cf.h, float(r)) * float(r),
                     float(np.asarray(cf.weight(np.array([float(r)]))[0])))
                for r in _TABLE_R_GRID)
    duality = max(_rel(float(np.asarray(cf.logit_weight(np.array([l]))[0])),
                       float(np.asarray(cf.weight(np.array([np.exp(-l)]))[0])))
                  for l in _LOGIT_GRID)
    return [
        _report(f"table.{label}.h_prime_fd", "table", hp_err, 1e-4, instance=label),
        _report(f"table.{label}.weight_fd", "table", w_err, 1e-4, instance=label),
        _report(f"table.{label}.logit_duality", "table", duality, 1e-10, instance=label),
    ]


def check_table(instances=GRADIENT_INSTANCES) -> list[OracleReport]:
    """Registry-table consistency, algebraic aliases, and a corrupted
    negative control."""
    reports = []
    for label in instances:
        reports.extend(_table_reports_for(parse_instance(label), label))

    r_grid = _TABLE_R_GRID
    ls = make_instance("ls")
    sba1 = make_instance("sba", lam=1.0)
    alias_err = float(np.max(np.abs(sba1.weight(r_grid) - ls.weight(r_grid))))
    reports.append(_report("table.sba_lam1_matches_ls", "table", alias_err, 1e-12))

    kl_alias = make_instance("sba", lam=0.0)
    kl_exact = 0.0 if np.array_equal(kl_alias.weight(r_grid), np.ones_like(r_grid)) \
        else 1.0
    reports.append(_report("table.sba_lam0_is_kl", "table", kl_exact, 0.0))

    try:
        make_instance("sba", lam=-1.0)
        rejected = 1.0
    except ValueError:
        rejected = 0.0
    reports.append(_report("table.sba_lam_minus1_rejected", "table", rejected, 0.0))

    kl = make_instance("kl")
    kl_const = float(np.max(np.abs(kl.weight(r_grid) - 1.0)))
    reports.append(_report("table.kl_weight_constant", "table", kl_const, 0.0))

    # Negative control: a weight off by 2x must be caught by the same
    # finite-difference comparison with relative error ~ 1.
    corrupted = ConvexFunction(
        name="corrupted", h=ls.h, h_prime=ls.h_prime, h_second=ls.h_second,
        weight=lambda r: 2.0 * np.asarray(r, dtype=float),
        logit_weight=lambda l: 2.0 * np.exp(-np.asarray(l, dtype=float)))
    bad_err = max(_rel(_fd_h_second(corrupted.h, float(r)) * float(r),
                       float(corrupted.weight(np.array([float(r)]))[0]))
                  for r in r_grid)
    reports.append(_report("table.negative_control_detects_corruption", "table",
                           abs(bad_err - 0.5), 1e-2, measured_rel_err=bad_err))
    return reports


def check_gradient_oracle(instances=GRADIENT_INSTANCES, times=ORACLE_TIMES,
                          tol: float = 1e-3) -> list[OracleReport]:
    """The central check: the sample-path gradient estimator against finite
    differences of the quadrature divergence, across instances, teachers,
    and noise levels."""
    sched = oracle_schedule()
    reports = []
    for case, (teacher, gen) in oracle_cases().items():
        for label in instances:
            cf = parse_instance(label)
            for t in times:
                est = oracle_generator_gradient(cf, teacher, gen, sched, t)
                ref = fd_divergence_gradient(cf, teacher, gen, sched, t)
                rel = float(np.linalg.norm(est - ref) / max(np.linalg.norm(ref), 1e-300))
                reports.append(_report(
                    f"gradient.{case}.{label}.t{t:g}", "gradient", rel, tol,
                    instance=label, teacher=case, t=t,
                    estimate=[float(v) for v in est], reference=[float(v) for v in ref]))

    # Fixed point: a student equal to the teacher has exactly cancelling
    # scores, so the estimator must return zero.
    teacher = gaussian(np.array([0.8]), np.array([[1.69]]))
    fixed = AffineGenerator(matrix=np.array([[1.3]]), offset=np.array([0.8]))
    est = oracle_generator_gradient(make_instance("kl"), teacher, fixed, sched, 0.5)
    reports.append(_report("gradient.fixed_point", "gradient",
                           float(np.linalg.norm(est)), 1e-7))
    return reports


def _mass_and_derivative(teacher: GaussianMixture, gen: AffineGenerator,
                         sched: Schedule, t: float,
                         scale: float = 1.0) -> tuple[float, np.ndarray]:
    """E_p[r] and its finite-difference gradient over generator parameters.

    scale multiplies the ratio field (the negative control uses 1.1 to
    model an unnormalized student density).
    """
    d = gen.dim
    base = gm_marginal(teacher, sched, t)

    def mass(theta: np.ndarray) -> float:
        g = _gen_from_theta(theta, d)
        ratio = analytic_ratio(teacher, g, sched, t)
        return mixture_expect(base, lambda pts: scale * np.asarray(ratio(pts)),
                              supports=(ratio.support,))

    theta0 = _theta(gen)
    value = mass(theta0)
    step = 1e-3
    grad = np.empty_like(theta0)
    for i in range(theta0.size):
        def central(h: float) -> float:
            tp, tm = theta0.copy(), theta0.copy()
            tp[i] += h
            tm[i] -= h
            return (mass(tp) - mass(tm)) / (2.0 * h)

        grad[i] = (4.0 * central(step / 2.0) - central(step)) / 3.0
    return value, grad


def check_vanishing_term(times=ORACLE_TIMES) -> list[OracleReport]:
    """The identity that kills the extra term in the gradient derivation:
    the ratio integrates to exactly 1 under p_t for every generator, so its
    parameter derivative is zero componentwise."""
    sched = oracle_schedule()
    reports = []
    for case, (teacher, gen) in oracle_cases().items():
        for t in times:
            value, grad = _mass_and_derivative(teacher, gen, sched, t)
            reports.append(_report(f"mass.{case}.t{t:g}.normalization", "mass",
                                   abs(value - 1.0), 1e-8, teacher=case, t=t))
            reports.append(_report(f"mass.{case}.t{t:g}.theta_derivative", "mass",
                                   float(np.max(np.abs(grad))), 1e-6, teacher=case, t=t,
                                   components=[float(v) for v in grad]))

    # Negative control: scaling the student density by 1.1 leaves the
    # theta-derivative at zero but shifts the mass to 1.1; the detectable
    # signature of an unnormalized ratio is that surplus of ~0.1.
    teacher, gen = oracle_cases()["1d"]
    value, _ = _mass_and_derivative(teacher, gen, sched, 0.5, scale=1.1)
    reports.append(_report("mass.negative_control_detects_surplus", "mass",
                           abs((value - 1.0) - 0.1), 1e-6, measured_mass=value))
    return reports


def check_kl_reduction() -> list[OracleReport]:
    """KL's unit weight must make the weighted path coincide bit-for-bit
    with the plain score-difference path, and make the output independent
    of which ratio field is supplied."""
    sched = oracle_schedule()
    kl = make_instance("kl")
    reports = []

    teacher, gen = oracle_cases()["1d"]
    rng = np.random.default_rng(11)
    n = 64
    eps = rng.standard_normal((n, 1))
    xi = rng.standard_normal((n, 1))
    t = np.exp(rng.uniform(np.log(sched.t_min), np.log(sched.t_max), size=n))
    sp = analytic_score(teacher, sched)
    sq = affine_score(gen, sched)
    ratio = analytic_ratio(teacher, gen, sched)

    weighted, _ = generator_gradient(gen, sp, sq, ratio, kl, sched, t, eps, xi)
    plain = vsd_gradient(gen, sp, sq, sched, t, eps, xi)
    exact = all(np.array_equal(a, b) for a, b in zip(weighted, plain))
    reports.append(_report("kl.bitwise_equals_score_difference", "kl",
                           0.0 if exact else 1.0, 0.0))

    # Ratio-field invariance: the unit weight never touches ratio values,
    # so swapping in an untrained classifier field changes nothing.
    clf = init_classifier(1, np.random.default_rng(5))
    clf_ratio = ratio_from_classifier(clf, dim=1)
    swapped, _ = generator_gradient(gen, sp, sq, clf_ratio, kl, sched, t, eps, xi)
    exact_swap = all(np.array_equal(a, b) for a, b in zip(weighted, swapped))
    reports.append(_report("kl.invariant_to_ratio_field", "kl",
                           0.0 if exact_swap else 1.0, 0.0))

    # Same reduction through an MLP generator with a learned-score student.
    rng2 = np.random.default_rng(23)
    mgen = init_mlp_generator(2, rng2)
    teacher2 = two_mode_teacher()
    snet = init_net([2 + 16, 32, 32, 2], rng2)
    sp2 = analytic_score(teacher2, sched)
    sq2 = net_score(snet, 2, sched)
    eps2 = rng2.standard_normal((32, 2))
    xi2 = rng2.standard_normal((32, 2))
    t2 = np.exp(rng2.uniform(np.log(sched.t_min), np.log(sched.t_max), size=32))
    clf2 = ratio_from_classifier(init_classifier(2, rng2), dim=2)
    weighted2, _ = generator_gradient(mgen, sp2, sq2, clf2, kl, sched, t2, eps2, xi2)
    plain2 = vsd_gradient(mgen, sp2, sq2, sched, t2, eps2, xi2)
    exact2 = all(np.array_equal(a, b) for a, b in zip(weighted2, plain2))
    reports.append(_report("kl.bitwise_equals_score_difference_mlp", "kl",
                           0.0 if exact2 else 1.0, 0.0))
    return reports


def _unit_gaussian_ratio(mu: float) -> RatioField:
    """Exact clean-data ratio N(mu, 1) / N(0, 1)."""

    def fn(pts: np.ndarray, tv: np.ndarray) -> np.ndarray:
        x = pts[:, 0]
        return np.exp(mu * x - 0.5 * mu * mu)

    return RatioField(fn=fn, provenance="analytic", dim=1, t_fixed=0.0,
                      support=gaussian(np.array([mu]), np.array([[1.0]])))


def check_closed_forms() -> list[OracleReport]:
    """Quadrature divergences against closed-form Gaussian values."""
    base = gaussian(np.array([0.0]), np.array([[1.0]]))
    r_half = _unit_gaussian_ratio(0.5)
    r_quarter = _unit_gaussian_ratio(0.25)

    ls = make_instance("ls")
    kl = make_instance("kl")
    reports = []

    got = divergence_to_one(ls, r_half, base)
    want = (np.exp(0.25) - 1.0) / 2.0
    reports.append(_report("closed_form.ls_to_one", "closed_form",
                           abs(got - want), 1e-6, measured=got, expected=want))

    got = divergence_to_one(kl, r_half, base)
    reports.append(_report("closed_form.kl_to_one", "closed_form",
                           abs(got - 0.125), 1e-6, measured=got, expected=0.125))

    got = divergence(ls, r_half, r_quarter, base)
    want = (np.exp(0.25) - 2.0 * np.exp(0.125) + np.exp(0.0625)) / 2.0
    reports.append(_report("closed_form.ls_between_ratios", "closed_form",
                           abs(got - want), 1e-6, measured=got, expected=want))
    return reports


GROUPS = {
    "table": check_table,
    "gradient": check_gradient_oracle,
    "mass": check_vanishing_term,
    "kl": check_kl_reduction,
    "closed_form": check_closed_forms,
}


def run_all(only: Optional[str] = None) -> list[OracleReport]:
    """Run the oracle suite (or one named group), in declaration order."""
    if only is not None and only not in GROUPS:
        raise ValueError(f"unknown check group {only!r}; known: {tuple(GROUPS)}")
    reports = []
    for name, fn in GROUPS.items():
        if only is None or name == only:
            reports.extend(fn())
    return reports

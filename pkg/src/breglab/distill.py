"""One-step distillation driven by weighted score differences.

The generator gradient is the density-ratio-weighted score difference: for
each sample, x = G(eps), x_t = alpha x + sigma xi, and the per-sample
vector w(t) * weight(h, r_t(x_t)) * (s_teacher - s_student) is pulled back
through the map from generator parameters to x_t.  Training alternates
refreshes of the student score net and the ratio classifier with generator
updates.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .analytic import (AffineGenerator, GaussianMixture, RatioField, analytic_ratio,
                       clamp_ratio, gm_sample)
from .bregman import ConvexFunction, parse_instance
from .classifier import classifier_step, init_classifier, ratio_from_classifier
from .diffusion import Schedule, sample_time, time_weight
from .errors import NumericError, ShapeError
from .metrics import mmd_rbf, mode_coverage, sliced_wasserstein2
from .nn import DenseNet, init_net, net_apply, net_gradients, save_checkpoint
from .optim import AdamState, adam_init, adam_update
from .scores import (ScoreProvider, analytic_score, dsm_step, init_score_net, net_score)

CSV_HEADER = "round,divergence_est,sw2,mmd,mode_cov_min,mean_weight,seconds"

GENERATOR_KINDS = ("affine", "mlp")
RATIO_SOURCES = ("analytic", "classifier")
STUDENT_SCORES = ("learned", "analytic")


@dataclass
class MlpGenerator:
    """One-step map eps -> net(eps) with eps ~ N(0, I)."""

    net: DenseNet

    def __post_init__(self):
        if self.net.widths[0] != self.net.widths[-1]:
            raise ShapeError("generator net must map dimension d to d")

    @property
    def dim(self) -> int:
        return self.net.widths[0]

    def apply(self, eps: np.ndarray) -> np.ndarray:
        return net_apply(self.net, np.atleast_2d(np.asarray(eps, dtype=float)))

    def pullback(self, eps: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
        grads, _ = net_gradients(self.net, eps, upstream)
        return grads

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def with_params(self, params: list[np.ndarray]) -> "MlpGenerator":
        return MlpGenerator(net=self.net.with_params(params))


def init_mlp_generator(dim: int, rng: np.random.Generator,
                       hidden: tuple[int, ...] = (64, 64)) -> MlpGenerator:
    return MlpGenerator(net=init_net([dim, *hidden, dim], rng))


def _first_bad_index(arr: np.ndarray) -> int:
    flat_bad = ~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1)
    return int(np.argmax(flat_bad))


def _assemble(gen, eps: np.ndarray, coef: np.ndarray, alpha: np.ndarray,
              diff: np.ndarray, sample_weights: Optional[np.ndarray]) -> list[np.ndarray]:
    """Average (or quadrature-weight) the per-sample pullbacks of -coef*alpha*diff.

    Shared by the weighted and plain score-difference paths so that a
    weight identically one yields bit-identical output.
    """
    scale = coef * alpha
    upstream = -(scale[:, None] * diff)
    if sample_weights is None:
        grads = gen.pullback(eps, upstream)
        n = eps.shape[0]
        return [g / n for g in grads]
    sw = np.asarray(sample_weights, dtype=float)
    if sw.shape != (eps.shape[0],):
        raise ShapeError("sample_weights must have one entry per sample")
    return gen.pullback(eps, upstream * sw[:, None])


def generator_gradient(gen, teacher_score: ScoreProvider, student_score: ScoreProvider,
                       ratio, cf: ConvexFunction, sched: Schedule,
                       t, eps: np.ndarray, xi: np.ndarray,
                       wt: Optional[Callable] = None,
                       sample_weights: Optional[np.ndarray] = None,
                       normalize: bool = False) -> tuple[list[np.ndarray], dict]:
    """Parameter gradient of the fixed-t divergence objective (batch estimate).

    The ratio and score fields are treated as fixed: they enter only by
    evaluation, so no gradient flows into them.  With sample_weights the
    empirical mean is replaced by the given quadrature weights (which
    should sum to 1).  Returns (gradients, info) where info carries the
    mean raw weight and ratio for bookkeeping.
    """
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = eps.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if eps.shape != xi.shape:
        raise ShapeError("eps and xi shapes differ")
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    alpha, sigma = sched.alpha_sigma(t)

    x = gen.apply(eps)
    x_t = alpha[:, None] * x + sigma[:, None] * xi

    r = clamp_ratio(np.asarray(ratio(x_t, t), dtype=float))
    if np.any(np.isnan(r)):
        # The clamp tames overflow but must not hide a broken ratio field,
        # even for instances whose weight ignores the ratio value.
        raise NumericError(f"ratio is NaN at sample {int(np.argmax(np.isnan(r)))}")
    w = cf.weight(r)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        bad = int(np.argmax(~(np.isfinite(w) & (w > 0))))
        raise NumericError(f"invalid weight at sample {bad}: {w[bad]!r}")
    mean_weight = float(np.mean(w))
    if normalize:
        w = w / mean_weight

    sp = teacher_score(x_t, t)
    sq = student_score(x_t, t)
    if not np.all(np.isfinite(sp)):
        raise NumericError(f"non-finite teacher score at sample {_first_bad_index(sp)}")
    if not np.all(np.isfinite(sq)):
        raise NumericError(f"non-finite student score at sample {_first_bad_index(sq)}")
    diff = sp - sq

    omega = wt(t, alpha, sigma) if wt is not None else np.ones_like(t)
    coef = w * omega
    grads = _assemble(gen, eps, coef, alpha, diff, sample_weights)
    info = {"mean_weight": mean_weight, "mean_ratio": float(np.mean(r))}
    return grads, info


def vsd_gradient(gen, teacher_score: ScoreProvider, student_score: ScoreProvider,
                 sched: Schedule, t, eps: np.ndarray, xi: np.ndarray,
                 wt: Optional[Callable] = None,
                 sample_weights: Optional[np.ndarray] = None) -> list[np.ndarray]:
    """Plain score-difference gradient (no ratio weighting) — the baseline
    that the weighted path must reproduce exactly when the weight is 1."""
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = eps.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if eps.shape != xi.shape:
        raise ShapeError("eps and xi shapes differ")
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    alpha, sigma = sched.alpha_sigma(t)

    x = gen.apply(eps)
    x_t = alpha[:, None] * x + sigma[:, None] * xi
    sp = teacher_score(x_t, t)
    sq = student_score(x_t, t)
    if not np.all(np.isfinite(sp)):
        raise NumericError(f"non-finite teacher score at sample {_first_bad_index(sp)}")
    if not np.all(np.isfinite(sq)):
        raise NumericError(f"non-finite student score at sample {_first_bad_index(sq)}")
    diff = sp - sq

    coef = wt(t, alpha, sigma) if wt is not None else np.ones_like(t)
    return _assemble(gen, eps, coef, alpha, diff, sample_weights)


# -- configuration and state --------------------------------------------------

@dataclass(frozen=True)
class DistillConfig:
    divergence: str = "kl"
    sched: Schedule = field(default_factory=Schedule)
    generator: str = "mlp"
    gen_hidden: tuple[int, ...] = (64, 64)
    time_weighting: str = "sigma2_alpha"
    batch: int = 256
    # score : classifier : generator steps per round.  The student score is
    # the plain score-difference path's only signal, and it chases a moving
    # generator; three refreshes per generator step keep its lag from
    # biasing where the generator settles while leaving the ratio-weighted
    # instances room to show their corrective effect.
    update_ratio: tuple[int, int, int] = (3, 2, 1)
    rounds: int = 2000
    gen_lr: float = 1e-3
    score_lr: float = 1e-3
    clf_lr: float = 1e-3
    ratio_source: str = "classifier"
    student_score: str = "learned"
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        parse_instance(self.divergence)  # validates the label
        if self.generator not in GENERATOR_KINDS:
            raise ValueError(f"generator must be one of {GENERATOR_KINDS}")
        if self.ratio_source not in RATIO_SOURCES:
            raise ValueError(f"ratio_source must be one of {RATIO_SOURCES}")
        if self.student_score not in STUDENT_SCORES:
            raise ValueError(f"student_score must be one of {STUDENT_SCORES}")
        if self.generator != "affine":
            if self.ratio_source == "analytic" or self.student_score == "analytic":
                raise ValueError("analytic ratio/score sources require an affine generator")
        if self.batch < 1 or self.rounds < 1:
            raise ValueError("batch and rounds must be positive")
        ur = self.update_ratio
        if len(ur) != 3 or any(int(v) != v or v < 0 for v in ur) or ur[2] < 1:
            raise ValueError("update_ratio needs non-negative counts with >= 1 generator step")
        time_weight(self.time_weighting)  # validates the name


@dataclass(frozen=True)
class TrainRecord:
    round: int
    divergence_est: float
    sw2: float
    mmd: float
    mode_cov: tuple[float, ...]
    mean_weight: float
    seconds: float

    def __post_init__(self):
        vals = [self.divergence_est, self.sw2, self.mmd, self.mean_weight,
                self.seconds, *self.mode_cov]
        if not np.all(np.isfinite(vals)):
            raise NumericError(f"non-finite metric in round {self.round}")

    def csv_row(self) -> str:
        cols = [str(self.round), repr(self.divergence_est), repr(self.sw2),
                repr(self.mmd), repr(float(min(self.mode_cov))),
                repr(self.mean_weight), repr(self.seconds)]
        return ",".join(cols)


@dataclass
class DistillState:
    gen: object
    gen_opt: AdamState
    score_net: Optional[DenseNet]
    score_opt: Optional[AdamState]
    clf_net: Optional[DenseNet]
    clf_opt: Optional[AdamState]
    round: int = 0
    last_info: dict = field(default_factory=dict)


def distill_init(cfg: DistillConfig, teacher: GaussianMixture,
                 rng: np.random.Generator) -> DistillState:
    """Fresh generator, score net, classifier, and optimizer states."""
    d = teacher.dim
    if cfg.generator == "affine":
        gen = AffineGenerator(matrix=np.eye(d), offset=np.zeros(d))
    else:
        gen = init_mlp_generator(d, rng, cfg.gen_hidden)
    gen_opt = adam_init(gen.params(), lr=cfg.gen_lr)

    score_net = score_opt = None
    if cfg.student_score == "learned":
        score_net = init_score_net(d, rng)
        score_opt = adam_init(score_net.params(), lr=cfg.score_lr)

    clf_net = clf_opt = None
    if cfg.ratio_source == "classifier":
        clf_net = init_classifier(d, rng)
        clf_opt = adam_init(clf_net.params(), lr=cfg.clf_lr)

    return DistillState(gen=gen, gen_opt=gen_opt, score_net=score_net,
                        score_opt=score_opt, clf_net=clf_net, clf_opt=clf_opt)


def _student_score_provider(cfg: DistillConfig, state: DistillState) -> ScoreProvider:
    if cfg.student_score == "analytic":
        from .scores import affine_score
        return affine_score(state.gen, cfg.sched)
    return net_score(state.score_net, state.gen.dim, cfg.sched)


def _ratio_field(cfg: DistillConfig, state: DistillState,
                 teacher: GaussianMixture) -> RatioField:
    if cfg.ratio_source == "analytic":
        return analytic_ratio(teacher, state.gen, cfg.sched)
    return ratio_from_classifier(state.clf_net, state.gen.dim)


def _metric_rng(cfg: DistillConfig) -> np.random.Generator:
    # Fixed per run (not per round) so a frozen generator yields constant
    # metric rows; independent of the training stream.
    return np.random.default_rng([cfg.seed, 7_919])


def _eval_record(cfg: DistillConfig, state: DistillState, teacher: GaussianMixture,
                 cf: ConvexFunction, round_idx: int, seconds: float,
                 metric_samples: int) -> TrainRecord:
    rng = _metric_rng(cfg)
    gen_pts = state.gen.apply(rng.standard_normal((metric_samples, teacher.dim)))
    teach_pts = gm_sample(teacher, rng, metric_samples)
    sw2 = sliced_wasserstein2(gen_pts, teach_pts, rng=rng)
    n_mmd = min(2048, metric_samples)
    mmd = mmd_rbf(gen_pts[:n_mmd], teach_pts[:n_mmd])
    cov = mode_coverage(gen_pts, teacher)

    # Plug-in objective estimate at the geometric-median time, on noisy
    # teacher draws.
    t_ref = float(np.sqrt(cfg.sched.t_min * cfg.sched.t_max))
    alpha, sigma = cfg.sched.alpha_sigma(np.array([t_ref]))
    n_div = min(2048, metric_samples)
    x0 = gm_sample(teacher, rng, n_div)
    x_t = alpha[0] * x0 + sigma[0] * rng.standard_normal(x0.shape)
    ratio = _ratio_field(cfg, state, teacher)
    r = clamp_ratio(np.asarray(ratio(x_t, np.full(n_div, t_ref)), dtype=float))
    h1 = float(np.asarray(cf.h(1.0)))
    hp1 = float(np.asarray(cf.h_prime(1.0)))
    div_est = float(np.mean(cf.h(r) - h1 - hp1 * (r - 1.0)))

    return TrainRecord(round=round_idx, divergence_est=div_est, sw2=sw2, mmd=mmd,
                       mode_cov=tuple(float(v) for v in cov),
                       mean_weight=float(state.last_info.get("mean_weight", 1.0)),
                       seconds=seconds)


def distill_round(state: DistillState, cfg: DistillConfig, teacher: GaussianMixture,
                  rng: np.random.Generator, record: bool = True,
                  clock: Optional[Callable[[], float]] = None,
                  metric_samples: int = 2048) -> tuple[DistillState, Optional[TrainRecord]]:
    """One alternation round: score refreshes, classifier refreshes, then
    generator updates; optionally evaluates a TrainRecord.  clock supplies
    elapsed wall-clock seconds, read when the record is created."""
    cf = parse_instance(cfg.divergence)
    wt = time_weight(cfg.time_weighting)
    d = teacher.dim
    n_score, n_clf, n_gen = cfg.update_ratio

    if cfg.student_score == "learned":
        for _ in range(n_score):
            x0_q = state.gen.apply(rng.standard_normal((cfg.batch, d)))
            state.score_net, state.score_opt, _ = dsm_step(
                state.score_net, state.score_opt, cfg.sched, x0_q, rng)

    if cfg.ratio_source == "classifier":
        for _ in range(n_clf):
            x0_p = gm_sample(teacher, rng, cfg.batch)
            x0_q = state.gen.apply(rng.standard_normal((cfg.batch, d)))
            state.clf_net, state.clf_opt, _ = classifier_step(
                state.clf_net, state.clf_opt, cfg.sched, x0_p, x0_q, rng)

    teacher_provider = analytic_score(teacher, cfg.sched, role="teacher")
    for _ in range(n_gen):
        student_provider = _student_score_provider(cfg, state)
        ratio = _ratio_field(cfg, state, teacher)
        eps = rng.standard_normal((cfg.batch, d))
        xi = rng.standard_normal((cfg.batch, d))
        t = sample_time(cfg.sched, rng, cfg.batch)
        grads, info = generator_gradient(
            state.gen, teacher_provider, student_provider, ratio, cf, cfg.sched,
            t, eps, xi, wt=wt, normalize=cfg.normalize)
        state.gen_opt, new_params = adam_update(state.gen_opt, state.gen.params(), grads)
        state.gen = state.gen.with_params(new_params)
        state.last_info = info

    state.round += 1
    rec = None
    if record:
        seconds = clock() if clock is not None else 0.0
        rec = _eval_record(cfg, state, teacher, cf, state.round, seconds, metric_samples)
    return state, rec


# -- generator checkpoints ----------------------------------------------------

def save_generator(path, gen, seed=None, step: int = 0, config_hash: str = "") -> None:
    """Persist either generator kind with the role tag "generator"."""
    if isinstance(gen, MlpGenerator):
        save_checkpoint(path, gen.net, role="generator", seed=seed, step=step,
                        config_hash=config_hash)
        return
    doc = {
        "format_version": 1,
        "kind": "affine_generator",
        "role": "generator",
        "matrix": gen.matrix.tolist(),
        "offset": gen.offset.tolist(),
        "meta": {"seed": seed, "step": int(step), "config_hash": config_hash},
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_generator(path):
    """Load a generator checkpoint of either kind; returns (gen, meta)."""
    with open(path) as f:
        doc = json.load(f)
    kind = doc.get("kind")
    meta = dict(doc.get("meta", {}))
    meta["role"] = doc.get("role", "")
    if kind == "affine_generator":
        gen = AffineGenerator(matrix=np.asarray(doc["matrix"], dtype=float),
                              offset=np.asarray(doc["offset"], dtype=float))
        return gen, meta
    if kind == "dense_net":
        from .nn import net_from_document
        net, _ = net_from_document(doc)
        return MlpGenerator(net=net), meta
    raise ValueError(f"checkpoint kind {kind!r} is not a generator")


def distill_run(cfg: DistillConfig, teacher: GaussianMixture,
                out_dir=None, record_every: int = 100,
                metric_samples: int = 2048,
                config_hash: str = "") -> tuple[list[TrainRecord], DistillState, dict]:
    """Run all rounds; write the metric CSV and checkpoints when out_dir is
    given.  Numeric failures stop the run with prior checkpoints retained;
    the returned status records the failing round.

    The generator learning rate anneals linearly to zero over the final
    40% of rounds so the last checkpoint is a settled point rather than
    one noisy step of a random walk; the score and classifier rates stay
    constant because those nets must keep tracking the generator."""
    if record_every < 1:
        raise ValueError("record_every must be positive")
    rng = np.random.default_rng(cfg.seed)
    state = distill_init(cfg, teacher, rng)
    decay_from = int(cfg.rounds * 0.6)
    records: list[TrainRecord] = []
    status = {"ok": True, "failed_round": None, "error": None, "artifacts": []}

    csv_file = None
    try:
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            csv_path = out_dir / "metrics.csv"
            csv_file = open(csv_path, "w")
            csv_file.write(CSV_HEADER + "\n")
            status["artifacts"].append(str(csv_path))
        start = time.perf_counter()
        for k in range(1, cfg.rounds + 1):
            if k > decay_from:
                state.gen_opt.lr = cfg.gen_lr * (cfg.rounds - k + 1) / max(
                    cfg.rounds - decay_from, 1)
            record = (k % record_every == 0) or (k == cfg.rounds)
            try:
                state, rec = distill_round(state, cfg, teacher, rng, record=record,
                                           clock=lambda: time.perf_counter() - start,
                                           metric_samples=metric_samples)
            except NumericError as exc:
                status.update(ok=False, failed_round=k, error=str(exc))
                break
            if rec is not None:
                records.append(rec)
                if csv_file is not None:
                    csv_file.write(rec.csv_row() + "\n")
                    csv_file.flush()
                if out_dir is not None:
                    _write_checkpoints(out_dir, cfg, state, status, config_hash)
    finally:
        if csv_file is not None:
            csv_file.close()
    return records, state, status


def _write_checkpoints(out_dir, cfg: DistillConfig, state: DistillState,
                       status: dict, config_hash: str = "") -> None:
    paths = []
    gen_path = out_dir / "generator.json"
    save_generator(gen_path, state.gen, seed=cfg.seed, step=state.round,
                   config_hash=config_hash)
    paths.append(gen_path)
    if state.score_net is not None:
        p = out_dir / "score_net.json"
        save_checkpoint(p, state.score_net, role="score_net", seed=cfg.seed,
                        step=state.round, config_hash=config_hash)
        paths.append(p)
    if state.clf_net is not None:
        p = out_dir / "ratio_classifier.json"
        save_checkpoint(p, state.clf_net, role="ratio_classifier", seed=cfg.seed,
                        step=state.round, config_hash=config_hash)
        paths.append(p)
    for p in paths:
        if str(p) not in status["artifacts"]:
            status["artifacts"].append(str(p))

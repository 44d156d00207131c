"""Density-ratio estimation by noisy binary classification.

A time-conditioned network is trained to separate teacher samples
(label 1) from student samples (label 0) after forward diffusion.  At the
optimum the logit l(x, t) satisfies sigmoid(l) = p_t / (p_t + q_t), so the
student/teacher ratio is recovered as r = e^-l.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .analytic import GaussianMixture, RatioField, RATIO_CLAMP_LOG
from .diffusion import Schedule, perturb_batch, sample_time
from .errors import NumericError, ShapeError
from .nn import (DenseNet, N_TIME_FEATURES, init_net, net_apply, net_gradients,
                 sigmoid, with_time)
from .optim import AdamState, adam_init, adam_update

CLASSIFIER_HIDDEN = (64, 64)

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def init_classifier(dim: int, rng: np.random.Generator,
                    hidden: tuple[int, ...] = CLASSIFIER_HIDDEN) -> DenseNet:
    widths = [dim + N_TIME_FEATURES, *hidden, 1]
    return init_net(widths, rng)


def classifier_logit(net: DenseNet, x: np.ndarray, t) -> np.ndarray:
    """Raw logit l(x, t), shape (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return net_apply(net, with_time(x, t))[:, 0]


def bce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy in a softplus form stable for either sign."""
    l, y = np.asarray(logits, dtype=float), np.asarray(labels, dtype=float)
    return float(np.mean(np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))))


def classifier_loss(net: DenseNet, xt_teacher: np.ndarray, t_teacher: np.ndarray,
                    xt_student: np.ndarray, t_student: np.ndarray
                    ) -> tuple[float, list[np.ndarray]]:
    """BCE loss and parameter gradients on noisy batches.

    Each sample carries its own time; teacher points are labeled 1 and
    student points 0.
    """
    xt_teacher = np.atleast_2d(np.asarray(xt_teacher, dtype=float))
    xt_student = np.atleast_2d(np.asarray(xt_student, dtype=float))
    if xt_teacher.shape[0] == 0 or xt_student.shape[0] == 0:
        raise ValueError("empty batch")
    if xt_teacher.shape[1] != xt_student.shape[1]:
        raise ShapeError("teacher and student dimensions differ")
    x = np.concatenate([xt_teacher, xt_student], axis=0)
    t = np.concatenate([np.broadcast_to(np.asarray(t_teacher, dtype=float),
                                        (xt_teacher.shape[0],)),
                        np.broadcast_to(np.asarray(t_student, dtype=float),
                                        (xt_student.shape[0],))])
    labels = np.concatenate([np.ones(xt_teacher.shape[0]), np.zeros(xt_student.shape[0])])
    n = x.shape[0]

    feats = with_time(x, t)
    logits = net_apply(net, feats)[:, 0]
    loss = bce_loss(logits, labels)
    upstream = ((sigmoid(logits) - labels) / n)[:, None]
    grads, _ = net_gradients(net, feats, upstream)
    return loss, grads


def classifier_step(net: DenseNet, opt: AdamState, sched: Schedule,
                    x0_teacher: np.ndarray, x0_student: np.ndarray,
                    rng: np.random.Generator,
                    t_fixed: Optional[float] = None) -> tuple[DenseNet, AdamState, float]:
    """One update on a balanced freshly-noised batch."""
    if x0_teacher.shape != x0_student.shape:
        raise ShapeError("teacher and student batches must match in shape")
    n = x0_teacher.shape[0]
    if t_fixed is None:
        t_p = sample_time(sched, rng, n)
        t_q = sample_time(sched, rng, n)
    else:
        t_p = np.full(n, float(t_fixed))
        t_q = np.full(n, float(t_fixed))
    xi_p = rng.standard_normal(x0_teacher.shape)
    xi_q = rng.standard_normal(x0_student.shape)
    xt_p = perturb_batch(sched, x0_teacher, t_p, xi_p)
    xt_q = perturb_batch(sched, x0_student, t_q, xi_q)

    loss, grads = classifier_loss(net, xt_p, t_p, xt_q, t_q)
    new_opt, new_params = adam_update(opt, net.params(), grads)
    return net.with_params(new_params), new_opt, loss


def fit_classifier(net: DenseNet, teacher_draw: Sampler, student_draw: Sampler,
                   sched: Schedule, steps: int, rng: np.random.Generator,
                   batch: int = 256, lr: float = 1e-3,
                   t_fixed: Optional[float] = None) -> tuple[DenseNet, list[float]]:
    """Train a ratio classifier on freshly drawn clean batches.

    batch is the per-class size, so each step sees 2 * batch points; times
    are drawn independently per sample unless t_fixed pins them.
    """
    if steps < 1:
        raise ValueError("need steps >= 1")
    opt = adam_init(net.params(), lr=lr)
    decay_from = int(steps * 0.6)
    trace = []
    for step in range(steps):
        if step >= decay_from:
            # Anneal to zero over the tail so the returned parameters are
            # not one noisy step away from the running optimum.
            opt.lr = lr * (steps - step) / max(steps - decay_from, 1)
        x0_p = teacher_draw(rng, batch)
        x0_q = student_draw(rng, batch)
        net, opt, loss = classifier_step(net, opt, sched, x0_p, x0_q, rng, t_fixed=t_fixed)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite classifier loss at step {step}")
        trace.append(loss)
    return net, trace


def ratio_estimate(net: DenseNet, x: np.ndarray, t) -> np.ndarray:
    """Clamped ratio e^-l(x, t)."""
    logits = classifier_logit(net, x, t)
    return np.exp(-np.clip(logits, -RATIO_CLAMP_LOG, RATIO_CLAMP_LOG))


def ratio_from_classifier(net: DenseNet, dim: int, t_fixed: Optional[float] = None,
                          support: Optional[GaussianMixture] = None) -> RatioField:
    """Package a trained classifier as a ratio field."""

    def fn(pts: np.ndarray, tv: np.ndarray) -> np.ndarray:
        return ratio_estimate(net, pts, tv)

    return RatioField(fn=fn, provenance="classifier", dim=dim, t_fixed=t_fixed, support=support)

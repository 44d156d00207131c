"""Generator-gradient assembly and the distillation driver."""
import numpy as np
import pytest

import breglab.distill as distill_mod
from breglab.analytic import (AffineGenerator, RatioField, analytic_ratio,
                              gaussian, two_mode_teacher)
from breglab.bregman import parse_instance
from breglab.classifier import init_classifier, ratio_from_classifier
from breglab.diffusion import Schedule, time_weight
from breglab.distill import (CSV_HEADER, DistillConfig, MlpGenerator,
                             distill_init, distill_round, distill_run,
                             generator_gradient, init_mlp_generator,
                             load_generator, save_generator, vsd_gradient)
from breglab.errors import NumericError, ShapeError
from breglab.nn import init_net
from breglab.scores import affine_score, analytic_score, init_score_net, net_score


def _affine_setup(matrix, offset):
    sched = Schedule()
    teacher = gaussian(np.array([0.8]), np.array([[1.69]]))
    gen = AffineGenerator(matrix=np.array(matrix), offset=np.array(offset))
    return (gen, analytic_score(teacher, sched), affine_score(gen, sched),
            analytic_ratio(teacher, gen, sched), sched)


def test_gradient_vanishes_at_exact_match():
    # Generator pushforward equals the teacher, so r == 1 and the score
    # difference is identically zero for every sample, not just on average.
    gen, sp, sq, ratio, sched = _affine_setup([[1.3]], [0.8])
    rng = np.random.default_rng(0)
    eps = rng.standard_normal((64, 1))
    xi = rng.standard_normal((64, 1))
    for label in ("kl", "ls", "be", "sba(5)"):
        grads, info = generator_gradient(gen, sp, sq, ratio,
                                         parse_instance(label), sched,
                                         0.5, eps, xi)
        assert max(np.max(np.abs(g)) for g in grads) < 1e-10
        assert abs(info["mean_ratio"] - 1.0) < 1e-12


def test_kl_path_bit_identical_to_score_difference_path():
    sched = Schedule()
    teacher = two_mode_teacher()
    rng = np.random.default_rng(1)
    gen = init_mlp_generator(2, rng)
    score_net = init_score_net(2, rng)
    clf = init_classifier(2, rng)
    sp = analytic_score(teacher, sched)
    sq = net_score(score_net, 2, sched)
    ratio = ratio_from_classifier(clf, 2)
    eps = rng.standard_normal((32, 2))
    xi = rng.standard_normal((32, 2))
    t = np.exp(rng.uniform(np.log(0.01), np.log(3.0), 32))
    wt = time_weight("sigma2_alpha")
    grads, _ = generator_gradient(gen, sp, sq, ratio, parse_instance("kl"),
                                  sched, t, eps, xi, wt=wt)
    plain = vsd_gradient(gen, sp, sq, sched, t, eps, xi, wt=wt)
    for g, p in zip(grads, plain):
        assert np.array_equal(g, p)


def test_normalized_weights_rescale_gradient():
    gen, sp, sq, _, sched = _affine_setup([[1.1]], [0.3])
    const = RatioField(fn=lambda x, t: np.full(x.shape[0], 2.0),
                       provenance="test", dim=1)
    rng = np.random.default_rng(2)
    eps = rng.standard_normal((48, 1))
    xi = rng.standard_normal((48, 1))
    cf = parse_instance("be")  # weight(2) = 0.5
    raw, info = generator_gradient(gen, sp, sq, const, cf, sched, 0.5, eps, xi)
    assert abs(info["mean_weight"] - 0.5) < 1e-15
    normed, _ = generator_gradient(gen, sp, sq, const, cf, sched, 0.5, eps, xi,
                                   normalize=True)
    for g, n in zip(raw, normed):
        assert np.allclose(g / 0.5, n, rtol=1e-12)


def test_non_finite_ratio_is_rejected():
    gen, sp, sq, _, sched = _affine_setup([[1.1]], [0.3])
    bad = RatioField(fn=lambda x, t: np.full(x.shape[0], np.nan),
                     provenance="test", dim=1)
    rng = np.random.default_rng(3)
    # Every instance must refuse, including KL whose weight ignores the
    # ratio value.
    for label in ("kl", "be"):
        with pytest.raises(NumericError):
            generator_gradient(gen, sp, sq, bad, parse_instance(label), sched,
                               0.5, rng.standard_normal((8, 1)),
                               rng.standard_normal((8, 1)))


def test_gradient_input_shape_guards():
    gen, sp, sq, ratio, sched = _affine_setup([[1.1]], [0.3])
    cf = parse_instance("kl")
    with pytest.raises(ValueError):
        generator_gradient(gen, sp, sq, ratio, cf, sched, 0.5,
                           np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ShapeError):
        generator_gradient(gen, sp, sq, ratio, cf, sched, 0.5,
                           np.zeros((4, 1)), np.zeros((5, 1)))


def test_mlp_generator_must_preserve_dimension():
    rng = np.random.default_rng(4)
    with pytest.raises(ShapeError):
        MlpGenerator(net=init_net([2, 8, 3], rng))


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(divergence="sba(-1)")
    with pytest.raises(ValueError):
        DistillConfig(generator="conv")
    with pytest.raises(ValueError):
        DistillConfig(ratio_source="analytic")  # mlp generator
    with pytest.raises(ValueError):
        DistillConfig(update_ratio=(2, 2, 0))
    with pytest.raises(ValueError):
        DistillConfig(time_weighting="cosine")
    cfg = DistillConfig(generator="affine", ratio_source="analytic",
                        student_score="analytic")
    assert cfg.divergence == "kl"


def test_frozen_generator_yields_constant_metric_rows():
    teacher = gaussian(np.array([0.0]), np.array([[1.0]]))
    cfg = DistillConfig(generator="affine", ratio_source="analytic",
                        student_score="analytic", gen_lr=0.0,
                        update_ratio=(0, 0, 1), rounds=3, batch=16)
    records, state, status = distill_run(cfg, teacher, record_every=1,
                                         metric_samples=256)
    assert status["ok"] and len(records) == 3
    first, last = records[0], records[-1]
    assert np.array_equal(state.gen.matrix, np.eye(1))
    assert (first.sw2, first.mmd, first.mode_cov, first.divergence_est) == \
           (last.sw2, last.mmd, last.mode_cov, last.divergence_est)
    assert [r.round for r in records] == [1, 2, 3]


def test_run_determinism_and_csv_layout(tmp_path):
    teacher = gaussian(np.array([0.2]), np.array([[1.21]]))
    cfg = DistillConfig(generator="affine", ratio_source="analytic",
                        student_score="analytic", rounds=7, batch=32,
                        update_ratio=(0, 0, 1), gen_lr=1e-2, seed=5)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    rec_a, state_a, _ = distill_run(cfg, teacher, out_dir=out_a, record_every=3,
                                    metric_samples=128)
    rec_b, state_b, _ = distill_run(cfg, teacher, out_dir=out_b, record_every=3,
                                    metric_samples=128)
    assert [r.round for r in rec_a] == [3, 6, 7]
    for a, b in zip(rec_a, rec_b):
        assert (a.round, a.divergence_est, a.sw2, a.mmd, a.mode_cov,
                a.mean_weight) == (b.round, b.divergence_est, b.sw2, b.mmd,
                                   b.mode_cov, b.mean_weight)
    assert np.array_equal(state_a.gen.matrix, state_b.gen.matrix)
    assert np.array_equal(state_a.gen.offset, state_b.gen.offset)

    lines = (out_a / "metrics.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    assert all(len(line.split(",")) == 7 for line in lines[1:])
    # seconds (last column) is the only column allowed to differ across runs
    other = (out_b / "metrics.csv").read_text().splitlines()
    for la, lb in zip(lines[1:], other[1:]):
        assert la.rsplit(",", 1)[0] == lb.rsplit(",", 1)[0]


def test_affine_distillation_approaches_teacher():
    # Fully analytic 1D pipeline: the generator should move from identity
    # toward the matching affine map (scale 1.3, shift 0.8).
    teacher = gaussian(np.array([0.8]), np.array([[1.69]]))
    cfg = DistillConfig(generator="affine", ratio_source="analytic",
                        student_score="analytic", rounds=400, batch=128,
                        update_ratio=(0, 0, 1), gen_lr=5e-3, seed=0)
    records, state, status = distill_run(cfg, teacher, record_every=400,
                                         metric_samples=2048)
    assert status["ok"]
    assert abs(abs(float(state.gen.matrix[0, 0])) - 1.3) < 0.1
    assert abs(float(state.gen.offset[0]) - 0.8) < 0.1
    assert records[-1].sw2 < 0.1


def test_checkpoint_roundtrip_both_kinds(tmp_path):
    rng = np.random.default_rng(6)
    mlp = init_mlp_generator(2, rng)
    p = tmp_path / "gen_mlp.json"
    save_generator(p, mlp, seed=3, step=17, config_hash="abc")
    back, meta = load_generator(p)
    assert isinstance(back, MlpGenerator)
    assert meta["role"] == "generator"
    assert meta["seed"] == 3 and meta["step"] == 17
    assert meta["config_hash"] == "abc"
    for a, b in zip(mlp.params(), back.params()):
        assert np.array_equal(a, b)

    aff = AffineGenerator(matrix=np.array([[1.5, 0.0], [0.1, 0.9]]),
                          offset=np.array([0.2, -0.3]))
    q = tmp_path / "gen_aff.json"
    save_generator(q, aff, seed=None, step=0, config_hash="")
    back2, meta2 = load_generator(q)
    assert isinstance(back2, AffineGenerator)
    assert np.array_equal(back2.matrix, aff.matrix)
    assert np.array_equal(back2.offset, aff.offset)
    assert meta2["role"] == "generator"


def test_load_generator_rejects_non_generator_files(tmp_path):
    from breglab.nn import save_checkpoint
    rng = np.random.default_rng(7)
    net = init_score_net(1, rng, hidden=(4,))
    p = tmp_path / "score.json"
    save_checkpoint(p, net, role="score_net", seed=0, step=0, config_hash="")
    # A score net maps d+time-features -> d, so it cannot be a one-step
    # generator; the width check refuses it (as a ValueError subclass).
    with pytest.raises(ValueError):
        load_generator(p)

    q = tmp_path / "other.json"
    q.write_text('{"kind": "manifest"}\n')
    with pytest.raises(ValueError):
        load_generator(q)


def test_failed_round_is_reported(tmp_path, monkeypatch):
    teacher = gaussian(np.array([0.0]), np.array([[1.0]]))
    cfg = DistillConfig(generator="affine", ratio_source="analytic",
                        student_score="analytic", rounds=5, batch=8,
                        update_ratio=(0, 0, 1))
    calls = {"n": 0}
    real = distill_mod.distill_round

    def flaky(state, cfg_, teacher_, rng, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericError("synthetic failure")
        return real(state, cfg_, teacher_, rng, **kw)

    monkeypatch.setattr(distill_mod, "distill_round", flaky)
    records, state, status = distill_run(cfg, teacher, out_dir=tmp_path,
                                         record_every=1, metric_samples=64)
    assert not status["ok"]
    assert status["failed_round"] == 3
    assert status["error"] == "synthetic failure"
    assert len(records) == 2  # rounds 1 and 2 completed and were kept
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0] == CSV_HEADER

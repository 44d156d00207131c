"""Dense net: forward/backward against finite differences, checkpoints."""
import numpy as np
import pytest

from breglab.errors import ShapeError
from breglab.nn import (DenseNet, init_net, load_checkpoint, net_apply,
                        net_gradients, save_checkpoint, sigmoid, time_features,
                        with_time, zero_like_params, N_TIME_FEATURES)


def test_sigmoid_stable_and_correct():
    z = np.array([-800.0, -5.0, 0.0, 5.0, 800.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert abs(s[2] - 0.5) < 1e-15
    assert abs(s[1] - 1.0 / (1.0 + np.exp(5.0))) < 1e-15
    assert s[0] >= 0.0 and s[-1] <= 1.0


def test_net_apply_shapes():
    rng = np.random.default_rng(0)
    net = init_net([3, 8, 2], rng)
    x = rng.standard_normal((5, 3))
    out = net_apply(net, x)
    assert out.shape == (5, 2)
    single = net_apply(net, x[0])
    assert single.shape == (2,)
    assert np.allclose(single, out[0])


def test_param_roundtrip_bit_exact():
    rng = np.random.default_rng(1)
    net = init_net([2, 6, 6, 2], rng)
    params = net.params()
    clone = net.with_params([p.copy() for p in params])
    x = rng.standard_normal((4, 2))
    assert np.array_equal(net_apply(net, x), net_apply(clone, x))


def _fd_param_grads(net, x, upstream, step=1e-6):
    grads = []
    params = net.params()
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        flat = g.reshape(-1)
        for j in range(p.size):
            for sgn in (+1.0, -1.0):
                shifted = [q.copy() for q in params]
                shifted[i].reshape(-1)[j] += sgn * step
                val = np.sum(net_apply(net.with_params(shifted), x) * upstream)
                flat[j] += sgn * val / (2.0 * step)
        grads.append(g)
    return grads


def test_parameter_gradients_match_fd():
    rng = np.random.default_rng(7)
    for widths in ([2, 5, 1], [3, 8, 8, 2]):
        net = init_net(widths, rng)
        x = rng.standard_normal((6, widths[0]))
        upstream = rng.standard_normal((6, widths[-1]))
        grads, _ = net_gradients(net, x, upstream)
        fd = _fd_param_grads(net, x, upstream)
        for g, f in zip(grads, fd):
            assert np.max(np.abs(g - f)) < 1e-5 * max(1.0, np.max(np.abs(f)))


def test_input_gradients_match_fd():
    rng = np.random.default_rng(8)
    net = init_net([3, 10, 2], rng)
    x = rng.standard_normal((5, 3))
    upstream = rng.standard_normal((5, 2))
    _, gx = net_gradients(net, x, upstream)
    step = 1e-6
    fd = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            for sgn in (+1.0, -1.0):
                xs = x.copy()
                xs[i, j] += sgn * step
                fd[i, j] += sgn * np.sum(net_apply(net, xs) * upstream) / (2 * step)
    assert np.max(np.abs(gx - fd)) < 1e-4


def test_gradient_probe_loop_many_architectures():
    # Seeded random probes: one random parameter direction per trial.
    rng = np.random.default_rng(42)
    for trial in range(25):
        widths = [int(rng.integers(1, 4)), int(rng.integers(2, 12)),
                  int(rng.integers(1, 3))]
        net = init_net(widths, rng)
        x = rng.standard_normal((3, widths[0]))
        upstream = rng.standard_normal((3, widths[-1]))
        grads, _ = net_gradients(net, x, upstream)
        params = net.params()
        direction = [rng.standard_normal(p.shape) for p in params]
        step = 1e-6
        plus = [p + step * d for p, d in zip(params, direction)]
        minus = [p - step * d for p, d in zip(params, direction)]
        fd = (np.sum(net_apply(net.with_params(plus), x) * upstream)
              - np.sum(net_apply(net.with_params(minus), x) * upstream)) / (2 * step)
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, direction))
        assert abs(analytic - fd) < 1e-4 * max(1.0, abs(fd))


def test_zero_like_params_shapes():
    rng = np.random.default_rng(3)
    net = init_net([4, 5, 2], rng)
    zeros = zero_like_params(net)
    for z, p in zip(zeros, net.params()):
        assert z.shape == p.shape and not z.any()


def test_time_features_shape_and_determinism():
    t = np.array([0.01, 0.1, 1.0, 3.0])
    feats = time_features(t)
    assert feats.shape == (4, N_TIME_FEATURES)
    assert np.array_equal(feats, time_features(t))
    assert np.all(np.abs(feats) <= 1.0 + 1e-12)


def test_with_time_concatenates():
    x = np.zeros((3, 2))
    xt = with_time(x, np.array([0.5, 0.5, 0.5]))
    assert xt.shape == (3, 2 + N_TIME_FEATURES)
    assert np.array_equal(xt[:, :2], x)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    net = init_net([2, 7, 3], rng)
    path = tmp_path / "net.json"
    save_checkpoint(path, net, role="generator", seed=9, step=120,
                    config_hash="abc123")
    loaded, meta = load_checkpoint(path)
    assert meta["role"] == "generator"
    assert meta["seed"] == 9 and meta["step"] == 120
    assert meta["config_hash"] == "abc123"
    assert loaded.widths == net.widths
    for a, b in zip(net.params(), loaded.params()):
        assert np.array_equal(a, b)


def test_checkpoint_file_stable_bytes(tmp_path):
    rng = np.random.default_rng(10)
    net = init_net([1, 4, 1], rng)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(p1, net, role="score_net")
    save_checkpoint(p2, net, role="score_net")
    assert p1.read_bytes() == p2.read_bytes()


def test_densenet_rejects_bad_shapes():
    rng = np.random.default_rng(11)
    net = init_net([2, 4, 1], rng)
    with pytest.raises(ShapeError):
        net_apply(net, np.zeros((3, 5)))
    bad = [p.copy() for p in net.params()]
    bad[0] = bad[0][:, :1]
    with pytest.raises(ShapeError):
        net.with_params(bad)

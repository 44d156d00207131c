"""Small dense feed-forward networks with exact reverse-mode gradients.

Hidden layers use a smooth SiLU nonlinearity (twice differentiable, so
gradients of learned fields with respect to their inputs are themselves
smooth); the output layer is linear.  Parameters are plain numpy arrays,
checkpoints are JSON documents that round-trip bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_ACTIVATIONS = ("silu", "identity")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z * sigmoid(z)


def _silu_prime(z: np.ndarray) -> np.ndarray:
    s = sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class DenseNet:
    """Feed-forward network: widths[0] inputs -> widths[-1] outputs."""

    widths: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    activation: str = "silu"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("widths must list at least two positive layer sizes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.widths) - 1:
            raise ShapeError("one weight matrix and bias vector per layer is required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.widths[k + 1], self.widths[k])
            if w.shape != want:
                raise ShapeError(f"layer {k}: weight shape {w.shape} != {want}")
            if b.shape != (self.widths[k + 1],):
                raise ShapeError(f"layer {k}: bias shape {b.shape} != {(self.widths[k + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: parameters must be finite")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] (the arrays themselves)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * self.n_layers:
            raise ShapeError("parameter list length mismatch")
        for k in range(self.n_layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ShapeError(f"layer {k}: parameter shape mismatch")
            self.weights[k] = w
            self.biases[k] = b

    def with_params(self, params: list[np.ndarray]) -> "DenseNet":
        """Copy of this net carrying the given parameter list."""
        out = DenseNet(widths=list(self.widths), weights=list(self.weights),
                       biases=list(self.biases), activation=self.activation)
        out.set_params(params)
        return out


def init_net(widths: list[int], rng: np.random.Generator, activation: str = "silu") -> DenseNet:
    """Fan-in-scaled uniform initialization; deterministic given the rng state."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return DenseNet(widths=list(widths), weights=weights, biases=biases, activation=activation)


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return x, single


def net_apply(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Forward evaluation; accepts a single vector or an (n, d) batch."""
    h, single = _as_batch(x, net.widths[0], "input (layer 0)")
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = z if (k == last or net.activation == "identity") else _silu(z)
    return h[0] if single else h


def net_gradients(net: DenseNet, x: np.ndarray, upstream: np.ndarray):
    """Reverse-mode gradients of <upstream, net_apply(x)>.

    Returns (param_grads, input_grad) where param_grads is the flat list
    [dW0, db0, dW1, db1, ...] summed over the batch and input_grad has the
    same batch shape as x.
    """
    h, single = _as_batch(x, net.widths[0], "input (layer 0)")
    up, up_single = _as_batch(upstream, net.widths[-1], "upstream (output layer)")
    if single != up_single or h.shape[0] != up.shape[0]:
        raise ShapeError("input and upstream batch sizes differ")

    last = net.n_layers - 1
    pre, post = [], [h]
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = post[-1] @ w.T + b
        pre.append(z)
        post.append(z if (k == last or net.activation == "identity") else _silu(z))

    grads: list[np.ndarray] = [None] * (2 * net.n_layers)
    delta = up
    for k in range(last, -1, -1):
        if k != last and net.activation != "identity":
            delta = delta * _silu_prime(pre[k])
        grads[2 * k] = delta.T @ post[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[k]
    dinput = delta
    return grads, (dinput[0] if single else dinput)


def zero_like_params(net: DenseNet) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


# -- time features -----------------------------------------------------------

N_TIME_FEATURES = 16
_TIME_FREQS = np.geomspace(0.25, 8.0, N_TIME_FEATURES // 2)


def time_features(t: np.ndarray) -> np.ndarray:
    """8-frequency sinusoidal embedding of log t, shape (n, 16).

    Conditions a single network on the noise level so one field serves all
    timesteps.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise ValueError("time_features requires t > 0")
    u = np.log(t)[:, None] * _TIME_FREQS[None, :]
    return np.concatenate([np.sin(u), np.cos(u)], axis=1)


def with_time(x: np.ndarray, t) -> np.ndarray:
    """Concatenate batched points with their time embedding."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (x.shape[0],))
    return np.concatenate([x, time_features(t)], axis=1)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = 1


def checkpoint_document(net: DenseNet, role: str, seed=None, step: int = 0,
                        config_hash: str = "") -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "dense_net",
        "role": role,
        "widths": list(net.widths),
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "meta": {"seed": seed, "step": int(step), "config_hash": config_hash},
    }


def save_checkpoint(path, net: DenseNet, role: str, seed=None, step: int = 0,
                    config_hash: str = "") -> None:
    doc = checkpoint_document(net, role, seed=seed, step=step, config_hash=config_hash)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def net_from_document(doc: dict) -> tuple[DenseNet, dict]:
    if doc.get("kind") != "dense_net":
        raise ValueError(f"checkpoint kind {doc.get('kind')!r} is not a dense_net")
    net = DenseNet(
        widths=[int(w) for w in doc["widths"]],
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        activation=doc["activation"],
    )
    return net, doc.get("meta", {})


def load_checkpoint(path) -> tuple[DenseNet, dict]:
    """Load a dense-net checkpoint; returns (net, metadata with role)."""
    with open(path) as f:
        doc = json.load(f)
    net, meta = net_from_document(doc)
    meta = dict(meta)
    meta["role"] = doc.get("role", "")
    return net, meta

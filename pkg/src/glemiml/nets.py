"""Dense-network primitives with analytic gradients and a finite-difference checker.

Everything differentiable in the system is built from these. Gradients are
hand-derived per layer; the model zoo is tiny and fixed, so no general tape.
All arithmetic is double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

_ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ConfigError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("layer weight/bias shapes inconsistent")


@dataclass
class FeedForwardNet:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("net needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeError("consecutive layer shapes do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]


def init_net(dims, activation: str, seed: int, output_activation: str = "identity") -> FeedForwardNet:
    """Uniform fan-based init, biases zero; hidden layers use `activation`."""
    if len(dims) < 2:
        raise ConfigError("need at least input and output dims")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"non-positive layer dim in {list(dims)}")
    rng = np.random.default_rng(np.uint64(seed))
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        act = output_activation if i == len(dims) - 2 else activation
        layers.append(DenseLayer(
            weights=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
            bias=np.zeros(fan_out),
            activation=act,
        ))
    return FeedForwardNet(layers=layers)


def forward(net: FeedForwardNet, x: np.ndarray) -> np.ndarray:
    """Single-vector forward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ShapeError(f"input shape {x.shape} != ({net.input_dim},)")
    return forward_batch(net, x[None, :])[0][0]


def forward_batch(net: FeedForwardNet, x: np.ndarray):
    """Batched forward pass. Returns (output (n, out), cache for backward)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input_dim {net.input_dim}")
    cache = []
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        cache.append((a, z))
        a = _act(layer.activation, z)
    return a, cache


def backward_batch(net: FeedForwardNet, cache, grad_out: np.ndarray):
    """Reverse-mode through a cached forward pass.

    Returns (param_grads, grad_in): param_grads is a list of (dW, db) per
    layer, grad_in the gradient on the input rows.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    param_grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in, z = cache[i]
        gz = g * _act_grad(layer.activation, z)
        param_grads[i] = (gz.T @ a_in, gz.sum(axis=0))
        g = gz @ layer.weights
    return param_grads, g


def backward(net: FeedForwardNet, x: np.ndarray, upstream: np.ndarray):
    """Single-vector backward. Returns (flat param gradient, input gradient)."""
    _, cache = forward_batch(net, np.asarray(x, dtype=np.float64)[None, :])
    param_grads, g_in = backward_batch(net, cache, np.asarray(upstream, dtype=np.float64)[None, :])
    return grads_to_vector(param_grads), g_in[0]


def net_to_vector(net: FeedForwardNet) -> np.ndarray:
    """Canonical flat parameter ordering: per layer, weights row-major then bias."""
    return np.concatenate([
        np.concatenate([layer.weights.ravel(), layer.bias]) for layer in net.layers
    ])


def vector_to_net(vec: np.ndarray, net: FeedForwardNet) -> None:
    """Write a flat parameter vector back into the net (inverse of net_to_vector)."""
    pos = 0
    for layer in net.layers:
        w_size = layer.weights.size
        layer.weights[...] = vec[pos:pos + w_size].reshape(layer.weights.shape)
        pos += w_size
        layer.bias[...] = vec[pos:pos + layer.bias.size]
        pos += layer.bias.size
    if pos != vec.size:
        raise ShapeError(f"parameter vector length {vec.size} != net size {pos}")


def grads_to_vector(param_grads) -> np.ndarray:
    return np.concatenate([
        np.concatenate([dw.ravel(), db]) for dw, db in param_grads
    ])


def num_params(net: FeedForwardNet) -> int:
    return sum(layer.weights.size + layer.bias.size for layer in net.layers)


def grad_check(loss_and_grad_fn, params: np.ndarray, eps: float = 1e-6) -> float:
    """Central-difference check of an analytic gradient.

    `loss_and_grad_fn` maps a flat parameter vector to (scalar loss, gradient).
    Returns the max over coordinates of |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|).
    """
    params = np.asarray(params, dtype=np.float64)
    loss0, analytic = loss_and_grad_fn(params)
    if not np.isfinite(loss0) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite loss or gradient at the check point")
    worst = 0.0
    for i in range(params.size):
        p = params.copy()
        p[i] += eps
        lp, _ = loss_and_grad_fn(p)
        p[i] -= 2 * eps
        lm, _ = loss_and_grad_fn(p)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError(f"non-finite loss at perturbed coordinate {i}")
        numeric = (lp - lm) / (2 * eps)
        err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, err)
    return worst


def net_to_json_dict(net: FeedForwardNet) -> dict:
    return {
        "dims": [net.input_dim] + [layer.weights.shape[0] for layer in net.layers],
        "activations": [layer.activation for layer in net.layers],
        "weights": [layer.weights.tolist() for layer in net.layers],
        "biases": [layer.bias.tolist() for layer in net.layers],
    }


def net_from_json_dict(doc: dict) -> FeedForwardNet:
    layers = [
        DenseLayer(
            weights=np.asarray(w, dtype=np.float64),
            bias=np.asarray(b, dtype=np.float64),
            activation=act,
        )
        for w, b, act in zip(doc["weights"], doc["biases"], doc["activations"])
    ]
    return FeedForwardNet(layers=layers)


def save_net(net: FeedForwardNet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_json_dict(net), fh)


def load_net(path) -> FeedForwardNet:
    with open(path, "r", encoding="utf-8") as fh:
        return net_from_json_dict(json.load(fh))

"""Dense feedforward networks: forward pass, input gradients, SGD training."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, NumericError, ShapeError, TrainingDivergenceError

ACTIVATIONS = ("relu", "tanh", "softmax", "identity")
NETWORK_FORMAT = "vmdetect-network"
NETWORK_VERSION = 1


def softmax(u):
    """Row-wise softmax with max subtraction. Accepts a vector or a 2-D batch."""
    u = np.asarray(u, dtype=float)
    z = u - np.max(u, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def activate(kind: str, u: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(u, 0.0)
    if kind == "tanh":
        return np.tanh(u)
    if kind == "softmax":
        return softmax(u)
    return u


def _activation_grad(kind, pre, post):
    # derivative of a pointwise activation; relu subgradient at 0 is 0
    if kind == "relu":
        return (pre > 0).astype(float)
    if kind == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.bias, dtype=float).ravel()
        if w.ndim != 2:
            raise ShapeError("weights must be a matrix")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def pre(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 2:
            # one product per row, so a row's result never depends on its batch position
            return np.matmul(x[:, None, :], self.weights.T)[:, 0, :] + self.bias
        return x @ self.weights.T + self.bias

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return activate(self.activation, self.pre(x))


@dataclass(frozen=True)
class Network:
    """An immutable stack of dense layers ending in softmax."""

    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ShapeError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        kinds = [layer.activation for layer in layers]
        if kinds[-1] != "softmax" or "softmax" in kinds[:-1]:
            raise ValueError("exactly the final layer must use softmax")
        object.__setattr__(self, "layers", layers)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    @property
    def n_hidden(self) -> int:
        """Number of hidden-layer outputs, i.e. candidate sampling positions."""
        return len(self.layers) - 1

    @property
    def sizes(self) -> list[int]:
        return [self.n_inputs] + [layer.n_out for layer in self.layers]

    def predict(self, X) -> np.ndarray:
        """Class indices predicted for a batch (or a single input)."""
        return np.argmax(forward_batch(self, X), axis=-1)


@dataclass(frozen=True)
class ActivationTrace:
    """Pre- and post-activation vectors for every layer of one forward pass.

    ``post[l]`` is the output of layer ``l``; ``post[-1]`` is the softmax
    output ``y``.
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]

    @property
    def y(self) -> np.ndarray:
        return self.post[-1]

    def __len__(self):
        return len(self.post)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be at least 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_inputs:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {net.n_inputs}")
    return x


def forward_full(net: Network, x) -> ActivationTrace:
    """Deterministic forward pass recording every layer's activations."""
    h = _check_input(net, x)
    pre, post = [], []
    for layer in net.layers:
        u = layer.pre(h)
        h = activate(layer.activation, u)
        pre.append(u)
        post.append(h)
    return ActivationTrace(tuple(pre), tuple(post))


def forward_batch(net: Network, X) -> np.ndarray:
    """Softmax outputs for a batch of inputs (rows)."""
    h = _check_input(net, X)
    for layer in net.layers:
        h = layer(h)
    return h


def forward_from(net: Network, start: int, h) -> np.ndarray:
    """Run layers ``start, start+1, ...`` on ``h`` (the input to layer ``start``)."""
    for layer in net.layers[start:]:
        h = layer(h)
    return h


def cross_entropy(y, labels) -> np.ndarray:
    y = np.atleast_2d(y)
    labels = np.atleast_1d(labels)
    return -np.log(np.maximum(y[np.arange(len(labels)), labels], 1e-300))


def _backward(net, trace, labels):
    """Gradients of the summed cross-entropy w.r.t. inputs and parameters."""
    y = trace.post[-1]
    delta = y.copy()
    delta[np.arange(len(labels)), labels] -= 1.0
    grads = [None] * len(net.layers)
    for l in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[l]
        if l < len(net.layers) - 1:
            delta = delta * _activation_grad(layer.activation, trace.pre[l], trace.post[l])
        below = trace.post[l - 1] if l > 0 else trace.inputs
        grads[l] = (delta.T @ below, delta.sum(axis=0))
        delta = delta @ layer.weights
    return delta, grads


class _BatchTrace:
    def __init__(self, net, X):
        self.inputs = X
        t = forward_full(net, X)
        self.pre, self.post = t.pre, t.post


def _check_labels(net, labels):
    labels = np.atleast_1d(np.asarray(labels))
    if labels.dtype.kind not in "iu":
        raise ValueError("labels must be integers")
    if np.any(labels < 0) or np.any(labels >= net.n_classes):
        raise ValueError(f"label out of range for {net.n_classes} classes")
    return labels


def grad_input(net: Network, x, label) -> np.ndarray:
    """Gradient of the cross-entropy loss with respect to the input.

    ``x`` may be a single vector with an integer ``label`` or a batch with a
    label array; the result has the shape of ``x``.
    """
    x = _check_input(net, x)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    labels = _check_labels(net, label)
    if labels.size != X.shape[0]:
        raise ShapeError("one label per input row is required")
    trace = _BatchTrace(net, X)
    g, _ = _backward(net, trace, labels)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite input gradient")
    return g[0] if single else g


def init_network(sizes: Sequence[int], hidden: str = "relu", seed: int = 0) -> Network:
    """Random network with weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        kind = "softmax" if i == len(sizes) - 2 else hidden
        layers.append(DenseLayer(w, np.zeros(n_out), kind))
    return Network(tuple(layers))


def train_sgd(X, y, sizes: Sequence[int], cfg: TrainConfig, hidden: str = "relu") -> Network:
    """Minibatch SGD with momentum on mean cross-entropy.

    ``sizes`` lists layer widths from input to output, e.g. ``[2, 32, 32, 2]``.
    Identical inputs and seed give bit-identical weights.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if y.shape[0] != X.shape[0]:
        raise ShapeError("inputs and labels differ in length")
    if sizes[0] != X.shape[1]:
        raise ShapeError(f"first layer width {sizes[0]} != feature count {X.shape[1]}")
    net = init_network(sizes, hidden=hidden, seed=cfg.seed)
    params = [[layer.weights.copy(), layer.bias.copy()] for layer in net.layers]
    velocity = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    kinds = [layer.activation for layer in net.layers]
    labels = _check_labels(net, y)
    rng = np.random.default_rng([cfg.seed, 1])
    n = X.shape[0]
    for epoch in range(int(cfg.epochs)):
        order = rng.permutation(n)
        for start in range(0, n, int(cfg.batch_size)):
            idx = order[start : start + int(cfg.batch_size)]
            current = Network(tuple(DenseLayer(w, b, k) for (w, b), k in zip(params, kinds)))
            trace = _BatchTrace(current, X[idx])
            loss = float(np.mean(cross_entropy(trace.post[-1], labels[idx])))
            if not math.isfinite(loss):
                raise TrainingDivergenceError(f"loss became {loss} in epoch {epoch}")
            _, grads = _backward(current, trace, labels[idx])
            scale = 1.0 / len(idx)
            for (w, b), (vw, vb), (gw, gb) in zip(params, velocity, grads):
                vw *= cfg.momentum
                vw -= cfg.learning_rate * scale * gw
                vb *= cfg.momentum
                vb -= cfg.learning_rate * scale * gb
                w += vw
                b += vb
            if not all(np.all(np.isfinite(w)) for w, _ in params):
                raise TrainingDivergenceError(f"weights diverged in epoch {epoch}")
    return Network(tuple(DenseLayer(w, b, k) for (w, b), k in zip(params, kinds)))


def accuracy(net: Network, X, y) -> float:
    return float(np.mean(net.predict(X) == np.asarray(y)))


def network_to_dict(net: Network) -> dict:
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "sizes": net.sizes,
        "layers": [
            {
                "in": layer.n_in,
                "out": layer.n_out,
                "activation": layer.activation,
                "weights": layer.weights.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("format") != NETWORK_FORMAT:
        raise DataFormatError(f"not a network file (format={doc.get('format')!r})")
    if doc.get("version") != NETWORK_VERSION:
        raise DataFormatError(f"unsupported network file version {doc.get('version')!r}")
    layers = []
    try:
        for entry in doc["layers"]:
            w = np.asarray(entry["weights"], dtype=float)
            if w.size != entry["in"] * entry["out"]:
                raise DataFormatError("weight array length does not match layer shape")
            layers.append(DenseLayer(w.reshape(entry["out"], entry["in"]), entry["bias"], entry["activation"]))
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed layer record: {exc}") from exc
    return Network(tuple(layers))


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_network(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return network_from_dict(doc)

"""MLP engine with quantized back-propagation.

The forward pass always runs in full precision.  What changes under a
:class:`~vquant.codec.QuantConfig` is only how each hidden layer's post-ReLU
output is *stored* for the backward pass:

1. ``forward`` computes the loss and every layer's activations.
2. ``store_activations`` quantizes the hidden activations (the network input
   and the softmax output stay in float32).
3. ``backward`` dequantizes a layer's stored input only when that layer's
   weight gradient ``delta^T @ input`` is formed, and drops the cache right
   after.
4. Local gradients propagate as ``delta_l = (delta_{l+1} @ W_{l+1}) * relu'(z_l)``.
   With ReLU the derivative is just the active/blocked mask, so the local
   gradients never touch the quantized activation values and are identical
   to full-precision training.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .codec import VQUANT, QuantizedTensor, dequantize, quantize
from .cost import memory_fraction
from .exceptions import DimensionError, NumericError, ParameterError, StateError
from .rng import Distribution, RngStream, sample
from .tensor import check_tensor, matmul, read_tensor, write_tensor


@dataclass(frozen=True)
class MlpNetwork:
    """Weights ``[fan_out x fan_in]`` and biases per layer; ReLU on hidden layers."""

    weights: tuple
    biases: tuple
    version: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i} fan-in {w.shape[1]} != previous fan-out {self.weights[i - 1].shape[0]}")

    @classmethod
    def init(cls, layer_sizes, seed=0):
        """He-normal weights, zero biases, drawn from ``RngStream(seed)``."""
        if len(layer_sizes) < 2:
            raise ParameterError("layer_sizes needs input and output sizes")
        rng = RngStream(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            w = sample(Distribution("gaussian", 0.0, float(np.sqrt(2.0 / fan_in))), (fan_out, fan_in), rng)
            weights.append(w)
            biases.append(np.zeros(fan_out, dtype=np.float32))
        return cls(tuple(weights), tuple(biases))

    @classmethod
    def from_arrays(cls, weights, biases):
        return cls(
            tuple(check_tensor(w, "weight") for w in weights),
            tuple(check_tensor(b, "bias") for b in biases),
        )

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def replace(self, weights=None, biases=None, bump=True):
        return MlpNetwork(
            tuple(weights) if weights is not None else self.weights,
            tuple(biases) if biases is not None else self.biases,
            self.version + 1 if bump else self.version,
        )

    def save(self, directory):
        """Write ``layerN_weight.vqtn`` / ``layerN_bias.vqtn`` plus ``manifest.json``."""
        os.makedirs(directory, exist_ok=True)
        layers = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wf, bf = f"layer{i}_weight.vqtn", f"layer{i}_bias.vqtn"
            write_tensor(os.path.join(directory, wf), w)
            write_tensor(os.path.join(directory, bf), b)
            layers.append({"weight": wf, "bias": bf, "shape": list(w.shape)})
        manifest = {"format": "vquant-mlp", "version": 1, "activation": "relu", "layers": layers}
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        weights, biases = [], []
        for layer in manifest["layers"]:
            w = read_tensor(os.path.join(directory, layer["weight"]))
            if list(w.shape) != list(layer["shape"]):
                raise DimensionError(f"{layer['weight']} has shape {w.shape}, manifest says {layer['shape']}")
            weights.append(w)
            biases.append(read_tensor(os.path.join(directory, layer["bias"])))
        return cls(tuple(weights), tuple(biases))


def _affine(h, w, b):
    return matmul(h, w.T) + b


def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logits(net, X):
    """Full-precision forward pass returning output-layer pre-softmax values."""
    h = np.asarray(X, dtype=np.float32)
    if h.ndim != 2 or h.shape[1] != net.weights[0].shape[1]:
        raise DimensionError(f"batch shape {h.shape} does not match input width {net.weights[0].shape[1]}")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = _affine(h, w, b)
        if i < net.n_layers - 1:
            h = np.maximum(h, np.float32(0))
    return h


def _check_labels(y, n, n_classes):
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"labels shape {y.shape} does not match batch size {n}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ParameterError("labels out of range for the output layer")
    return y.astype(np.int64)


def forward(net, X, y):
    """Return ``(loss, activations)``.

    ``activations`` is ``[X, h_1, ..., h_{L-1}, probs]``: the network input,
    the post-ReLU output of every hidden layer and the softmax output.
    ``loss`` is the mean cross-entropy as a Python float.
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != net.weights[0].shape[1]:
        raise DimensionError(f"batch shape {X.shape} does not match input width {net.weights[0].shape[1]}")
    y = _check_labels(y, X.shape[0], net.weights[-1].shape[0])
    acts = [X]
    h = X
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = _affine(h, w, b)
        if i < net.n_layers - 1:
            h = np.maximum(h, np.float32(0))
            acts.append(h)
    logp = log_softmax(h)
    loss = -float(np.mean(logp[np.arange(len(y)), y].astype(np.float64)))
    if not np.isfinite(loss):
        diag = {
            "max_abs_weight": [float(np.abs(w).max()) for w in net.weights],
            "max_abs_logit": float(np.nanmax(np.abs(h))) if np.isfinite(h).any() else float("nan"),
        }
        raise NumericError("non-finite loss in forward pass", diag)
    acts.append(np.exp(logp))
    return loss, acts


def loss_gradient(probs, y):
    """d(mean cross-entropy)/d(logits) = (softmax - onehot) / batch."""
    grad = probs.astype(np.float32, copy=True)
    grad[np.arange(len(y)), np.asarray(y, dtype=np.int64)] -= np.float32(1)
    return grad / np.float32(len(y))


@dataclass
class LayerCaches:
    """Stored inputs of every layer for one forward pass.

    ``entries[l]`` is what layer ``l`` needs for its weight gradient: the raw
    batch for ``l == 0`` and the (possibly quantized) post-ReLU output of
    layer ``l - 1`` otherwise.  Entries are released as they are consumed.
    """

    entries: list
    version: int
    config: object = None
    full_bytes: int = 0
    stored_bytes: int = 0

    def take(self, layer):
        if layer >= len(self.entries):
            raise StateError(f"no cache for layer {layer}")
        entry = self.entries[layer]
        if entry is None:
            raise StateError(f"cache for layer {layer} already consumed")
        return entry

    def release(self, layer):
        self.entries[layer] = None


def stored_bytes(cfg, n_elements):
    """Bytes needed to store ``n_elements`` hidden activations under ``cfg``."""
    full = 4 * int(n_elements)
    if cfg is None:
        return full
    frac = memory_fraction(cfg.bits, cfg.large_ratio, cfg.mode, cfg.mode == VQUANT, cfg.outlier_precision)
    return int(round(frac * full))


def store_activations(activations, cfg, version=0):
    """Build the backward-pass caches from ``forward`` activations.

    ``cfg=None`` keeps everything in float32.  Otherwise every hidden
    activation is quantized with ``cfg``; ``vquant`` additionally stores a
    1-bit ReLU mask while ``rvquant`` uses its reserved zero code.
    """
    X, hidden = activations[0], activations[1:-1]
    entries = [X]
    n_hidden = 0
    for h in hidden:
        n_hidden += h.size
        if cfg is None:
            entries.append(h)
            continue
        if np.any(h < 0):
            raise StateError("hidden activation is negative; ReLU contract violated")
        entries.append(quantize(h, cfg, relu_mask=cfg.mode == VQUANT))
    return LayerCaches(entries, version, cfg, 4 * n_hidden, stored_bytes(cfg, n_hidden))


def _dense(entry):
    return dequantize(entry) if isinstance(entry, QuantizedTensor) else entry


def _active(entry):
    return entry.active_mask() if isinstance(entry, QuantizedTensor) else entry > 0


@dataclass
class Gradients:
    weights: list
    biases: list
    deltas: list = field(default_factory=list)


def backward(net, loss_grad, caches):
    """Weight and bias gradients from the output gradient and stored caches.

    ``deltas[l]`` holds the local gradient at the output of layer ``l`` (the
    last entry is ``loss_grad`` itself).
    """
    if caches.version != net.version:
        raise StateError(f"caches from network version {caches.version}, network is at {net.version}")
    if len(caches.entries) != net.n_layers:
        raise StateError("cache count does not match layer count")
    L = net.n_layers
    gw, gb, deltas = [None] * L, [None] * L, [None] * L
    delta = np.asarray(loss_grad, dtype=np.float32)
    for layer in range(L - 1, -1, -1):
        entry = caches.take(layer)
        deltas[layer] = delta
        gw[layer] = matmul(delta.T, _dense(entry))
        gb[layer] = matmul(np.ones((1, delta.shape[0]), dtype=np.float32), delta)[0]
        if layer:
            delta = matmul(delta, net.weights[layer]) * _active(entry)
        caches.release(layer)
    return Gradients(gw, gb, deltas)


def sgd_step(net, grads, learning_rate):
    """Plain SGD: ``w <- w - lr * grad``."""
    if learning_rate < 0:
        raise ParameterError("learning rate must be non-negative")
    for g in list(grads.weights) + list(grads.biases):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    lr = np.float32(learning_rate)
    weights = [w - lr * g for w, g in zip(net.weights, grads.weights)]
    biases = [b - lr * g for b, g in zip(net.biases, grads.biases)]
    for w in weights:
        if not np.all(np.isfinite(w)):
            raise NumericError("non-finite weight after update")
    return net.replace(weights, biases)


def train_step(net, X, y, cfg, learning_rate):
    """One forward/store/backward/update cycle; returns ``(net, loss, caches_info)``."""
    loss, acts = forward(net, X, y)
    caches = store_activations(acts, cfg, net.version)
    grads = backward(net, loss_gradient(acts[-1], y), caches)
    return sgd_step(net, grads, learning_rate), loss, caches


def accuracy(net, X, y):
    return float(np.mean(np.argmax(logits(net, X), axis=1) == np.asarray(y)))

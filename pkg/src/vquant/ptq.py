"""Post-training quantization with fine-tuning and configuration sweeps.

Weights are quantized once per layer (symmetric range, value-aware outliers);
the input of every layer after the first is quantized on the fly, profiled
on the batch being evaluated.  Fine-tuning runs the quantized forward pass
and pushes gradients straight through both quantizers onto the float32
weights, which are then re-quantized before the next step.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .codec import VQUANT, QuantConfig, dequantize, quantize
from .cost import memory_fraction
from .exceptions import ConfigError, NumericError
from .network import Gradients, _check_labels, accuracy, log_softmax, loss_gradient, sgd_step
from .rng import RngStream
from .tensor import matmul

BYPASS_BITS = 32


@dataclass(frozen=True)
class InferenceQuantConfig:
    """Bit widths and large-value ratios for weights and activations.

    A bit width of 32 disables that quantizer (float32 pass-through).
    """

    weight_bits: int = 4
    act_bits: int = 4
    weight_ratio: float = 0.01
    act_ratio: float = 0.01
    outlier_precision: int = 16

    def __post_init__(self):
        for name in ("weight_bits", "act_bits"):
            bits = getattr(self, name)
            if bits != BYPASS_BITS and not 1 <= bits <= 8:
                raise ConfigError(f"{name} must be in 1..8 (or 32 to bypass), got {bits}")
        for name in ("weight_ratio", "act_ratio"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.outlier_precision not in (16, 32):
            raise ConfigError("outlier_precision must be 16 or 32")

    @property
    def weight_config(self):
        if self.weight_bits == BYPASS_BITS:
            return None
        return QuantConfig(self.weight_bits, self.weight_ratio, VQUANT, "symmetric", self.outlier_precision)

    @property
    def act_config(self):
        if self.act_bits == BYPASS_BITS:
            return None
        return QuantConfig(self.act_bits, self.act_ratio, VQUANT, "nonnegative", self.outlier_precision)

    @property
    def memory_fraction(self):
        """Weight storage relative to float32 (no mask; codes plus outliers)."""
        if self.weight_bits == BYPASS_BITS:
            return 1.0
        return memory_fraction(self.weight_bits, self.weight_ratio, VQUANT, False, self.outlier_precision)

    @property
    def label(self):
        return f"w{self.weight_bits}:{self.weight_ratio * 100:g}/a{self.act_bits}:{self.act_ratio * 100:g}"

    def to_dict(self):
        return asdict(self)


def quantize_weights(net, config):
    cfg = config.weight_config
    if cfg is None:
        return list(net.weights)
    return [dequantize(quantize(w, cfg)) for w in net.weights]


def _quantize_input(h, cfg):
    return h if cfg is None else dequantize(quantize(h, cfg))


class QuantizedModel:
    """Inference view of a float network under an :class:`InferenceQuantConfig`."""

    def __init__(self, net, config):
        self.net = net
        self.config = config
        self.weights = quantize_weights(net, config)

    def logits(self, X):
        h = np.asarray(X, dtype=np.float32)
        act_cfg = self.config.act_config
        for i, (w, b) in enumerate(zip(self.weights, self.net.biases)):
            if i:
                h = _quantize_input(h, act_cfg)
            h = matmul(h, w.T) + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, np.float32(0))
        return h

    def predict(self, X):
        return np.argmax(self.logits(X), axis=1)

    def accuracy(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


def quantize_model(net, config):
    return QuantizedModel(net, config)


def quantized_gradients(net, config, X, y):
    """Loss and pass-through gradients of the quantized forward pass.

    Gradients are taken with respect to the float32 weights: each quantizer
    is treated as the identity on the backward path.
    """
    weights = quantize_weights(net, config)
    act_cfg = config.act_config
    X = np.asarray(X, dtype=np.float32)
    y = _check_labels(y, X.shape[0], net.weights[-1].shape[0])
    inputs, masks = [], []
    h = X
    for i, (w, b) in enumerate(zip(weights, net.biases)):
        if i:
            h = _quantize_input(h, act_cfg)
        inputs.append(h)
        z = matmul(h, w.T) + b
        if i < len(weights) - 1:
            masks.append(z > 0)
            h = np.maximum(z, np.float32(0))
        else:
            h = z
    logp = log_softmax(h)
    loss = -float(np.mean(logp[np.arange(len(y)), y].astype(np.float64)))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss during fine-tuning")
    delta = loss_gradient(np.exp(logp), y)
    L = len(weights)
    gw, gb = [None] * L, [None] * L
    for layer in range(L - 1, -1, -1):
        gw[layer] = matmul(delta.T, inputs[layer])
        gb[layer] = matmul(np.ones((1, delta.shape[0]), dtype=np.float32), delta)[0]
        if layer:
            delta = matmul(delta, weights[layer]) * masks[layer - 1]
    return loss, Gradients(gw, gb)


def finetune(net, config, X, y, epochs=1, learning_rate=0.01, batch_size=32, seed=0):
    """Fine-tune float weights through the quantized forward pass.

    Returns ``(net, losses)`` where ``losses`` holds the mean loss per epoch.
    ``epochs=0`` returns ``net`` untouched.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    rng = RngStream(seed).spawn(2)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(X))
        batch_losses = []
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            loss, grads = quantized_gradients(net, config, X[idx], y[idx])
            net = sgd_step(net, grads, learning_rate)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    return net, losses


@dataclass
class SweepResult:
    float_accuracy: float
    target: float
    candidates: list
    selected: dict = None

    @property
    def status(self):
        return "selected" if self.selected is not None else "none-qualify"

    @property
    def best(self):
        return max(self.candidates, key=lambda c: c["accuracy"]) if self.candidates else None

    def to_dict(self):
        return {
            "status": self.status,
            "float_accuracy": self.float_accuracy,
            "target": self.target,
            "candidates": self.candidates,
            "selected": self.selected,
            "best": self.best,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        fields = ["label", "weight_bits", "act_bits", "weight_ratio", "act_ratio",
                  "ptq_accuracy", "accuracy", "memory_fraction", "qualifies", "selected"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for c in self.candidates:
            row = {**c["config"], **{k: c[k] for k in ("label", "ptq_accuracy", "accuracy", "memory_fraction", "qualifies")}}
            row["selected"] = self.selected is not None and c["label"] == self.selected["label"]
            writer.writerow({k: row[k] for k in fields})
        return buf.getvalue()


def evaluate_candidate(net, config, train_data, eval_data, finetune_epochs, learning_rate, batch_size, seed):
    ptq_acc = quantize_model(net, config).accuracy(*eval_data)
    tuned, _ = finetune(net, config, *train_data, finetune_epochs, learning_rate, batch_size, seed)
    return {
        "label": config.label,
        "config": config.to_dict(),
        "ptq_accuracy": ptq_acc,
        "accuracy": quantize_model(tuned, config).accuracy(*eval_data),
        "memory_fraction": config.memory_fraction,
    }


def sweep(net, candidates, train_data, eval_data, max_drop=1.0, finetune_epochs=1,
          learning_rate=0.01, batch_size=32, seed=0, n_jobs=1):
    """Fine-tune and evaluate every candidate, then pick the smallest qualifying one.

    A candidate qualifies when its accuracy is at least the float accuracy
    minus ``max_drop`` percentage points.  Among qualifiers the lowest weight
    bit width wins, then the lowest activation bit width, then the lowest
    memory fraction.  If none qualify, ``selected`` is ``None``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ConfigError("sweep needs at least one candidate")
    float_acc = accuracy(net, *eval_data)
    target = float_acc - max_drop / 100.0
    args = (train_data, eval_data, finetune_epochs, learning_rate, batch_size, seed)
    if n_jobs == 1:
        rows = [evaluate_candidate(net, c, *args) for c in candidates]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(delayed(evaluate_candidate)(net, c, *args) for c in candidates)
    for row in rows:
        row["qualifies"] = bool(row["accuracy"] >= target - 1e-12)
    qualifying = [r for r in rows if r["qualifies"]]
    selected = None
    if qualifying:
        selected = min(
            qualifying,
            key=lambda r: (r["config"]["weight_bits"], r["config"]["act_bits"], r["memory_fraction"]),
        )
    return SweepResult(float_acc, target, rows, selected)

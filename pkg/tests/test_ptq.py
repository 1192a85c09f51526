import numpy as np
import pytest

from vquant.codec import dequantize, quantize
from vquant.datasets import load_toy_model
from vquant.exceptions import ConfigError
from vquant.network import accuracy, backward, forward, loss_gradient, store_activations
from vquant.ptq import (
    InferenceQuantConfig,
    finetune,
    quantize_model,
    quantize_weights,
    quantized_gradients,
    sweep,
)

BYPASS = InferenceQuantConfig(32, 32, 0.0, 0.0)


@pytest.fixture(scope="module")
def toy():
    return load_toy_model(0)


def test_bypass_predictions_match_float(toy, digits):
    _, _, Xt, yt = digits
    model = quantize_model(toy, BYPASS)
    assert np.array_equal(model.predict(Xt), np.argmax(forward(toy, Xt, yt)[1][-1], axis=1))


def test_eight_bit_close_to_float(toy, digits):
    _, _, Xt, yt = digits
    acc = quantize_model(toy, InferenceQuantConfig(8, 8, 0.0, 0.0)).accuracy(Xt, yt)
    assert acc >= accuracy(toy, Xt, yt) - 0.005


def test_one_bit_collapses_but_completes(toy, digits):
    _, _, Xt, yt = digits
    acc = quantize_model(toy, InferenceQuantConfig(1, 1, 0.0, 0.0)).accuracy(Xt, yt)
    assert acc < accuracy(toy, Xt, yt) - 0.2


def test_weights_are_symmetric_vquant(toy):
    cfg = InferenceQuantConfig(4, 4, 0.01, 0.01)
    for w, wq in zip(toy.weights, quantize_weights(toy, cfg)):
        assert np.array_equal(wq, dequantize(quantize(w, cfg.weight_config)))


def test_zero_epochs_returns_input(toy, digits):
    X, y, _, _ = digits
    tuned, losses = finetune(toy, InferenceQuantConfig(), X, y, epochs=0)
    assert tuned is toy and losses == []


def test_pass_through_gradient_identity(toy, digits):
    X, y, _, _ = digits
    X, y = X[:40], y[:40]
    cfg = InferenceQuantConfig(4, 32, 0.01, 0.0)
    loss, grads = quantized_gradients(toy, cfg, X, y)
    substituted = toy.replace(weights=quantize_weights(toy, cfg), bump=False)
    ref_loss, acts = forward(substituted, X, y)
    ref = backward(substituted, loss_gradient(acts[-1], y), store_activations(acts, None, substituted.version))
    assert loss == ref_loss
    for a, b in zip(grads.weights + grads.biases, ref.weights + ref.biases):
        assert np.array_equal(a, b)


def test_finetune_deterministic(toy, digits):
    X, y, _, _ = digits
    a, la = finetune(toy, InferenceQuantConfig(), X[:200], y[:200], epochs=1, seed=3)
    b, lb = finetune(toy, InferenceQuantConfig(), X[:200], y[:200], epochs=1, seed=3)
    assert la == lb and all(np.array_equal(p, q) for p, q in zip(a.weights, b.weights))


@pytest.mark.parametrize(
    "kwargs", [dict(weight_bits=0), dict(act_bits=9), dict(weight_ratio=1.0), dict(outlier_precision=8)]
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        InferenceQuantConfig(**kwargs)


def test_labels_and_memory():
    cfg = InferenceQuantConfig(4, 4, 0.01, 0.01)
    assert cfg.label == "w4:1/a4:1"
    assert cfg.memory_fraction == pytest.approx(4 / 32 + 0.01)
    assert BYPASS.memory_fraction == 1.0


def test_single_bypass_candidate_selected(toy, digits):
    X, y, Xt, yt = digits
    result = sweep(toy, [BYPASS], (X, y), (Xt, yt), finetune_epochs=0)
    assert result.status == "selected"
    assert result.selected["accuracy"] == result.float_accuracy


def test_none_qualify(toy, digits):
    X, y, Xt, yt = digits
    cands = [InferenceQuantConfig(1, 1, 0.0, 0.0), InferenceQuantConfig(1, 1, 0.01, 0.01)]
    result = sweep(toy, cands, (X, y), (Xt, yt), max_drop=1.0, finetune_epochs=0)
    assert result.status == "none-qualify" and result.selected is None
    assert result.best is not None and result.to_dict()["best"]["label"] in {c.label for c in cands}


def test_selection_is_sound(toy, digits):
    X, y, Xt, yt = digits
    cands = [InferenceQuantConfig(b, b, r, r) for b, r in ((2, 0.01), (4, 0.01), (8, 0.0))]
    result = sweep(toy, cands, (X[:300], y[:300]), (Xt, yt), finetune_epochs=1)
    sel = result.selected
    assert sel is not None and sel["accuracy"] >= result.target
    smaller = [c for c in result.candidates if c["config"]["weight_bits"] < sel["config"]["weight_bits"]]
    assert not any(c["qualifies"] for c in smaller)
    assert result.to_csv().count("\n") == 4


def test_parallel_sweep_matches_serial(toy, digits):
    X, y, Xt, yt = digits
    cands = [InferenceQuantConfig(4, 4, 0.01, 0.01), InferenceQuantConfig(8, 8, 0.0, 0.0)]
    serial = sweep(toy, cands, (X[:200], y[:200]), (Xt, yt), finetune_epochs=1)
    parallel = sweep(toy, cands, (X[:200], y[:200]), (Xt, yt), finetune_epochs=1, n_jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_empty_sweep(toy, digits):
    with pytest.raises(ConfigError):
        sweep(toy, [], digits[:2], digits[2:])


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finetuning_helps_four_bit(digits, seed):
    X, y, Xt, yt = digits
    net = load_toy_model(seed)
    cfg = InferenceQuantConfig(4, 4, 0.01, 0.01)
    before = quantize_model(net, cfg).accuracy(Xt, yt)
    tuned, losses = finetune(net, cfg, X, y, epochs=3, learning_rate=0.01, seed=seed)
    after = quantize_model(tuned, cfg).accuracy(Xt, yt)
    assert after >= before
    assert len(losses) == 3

import math

import numpy as np
import pytest
from oracles import central_differences, preactivation_margin, relative_error

from vquant.codec import QuantConfig, dequantize
from vquant.exceptions import DimensionError, NumericError, StateError
from vquant.network import (
    Gradients,
    MlpNetwork,
    backward,
    forward,
    loss_gradient,
    sgd_step,
    store_activations,
    stored_bytes,
    train_step,
)
from vquant.rng import RngStream, sample

CONFIGS = {
    "full": None,
    "2:0": QuantConfig(2, 0.0, "rvquant", "nonnegative"),
    "3:2": QuantConfig(3, 0.02, "rvquant", "nonnegative"),
    "3:2 masked": QuantConfig(3, 0.02, "vquant", "nonnegative"),
}


def run_backward(net, X, y, cfg):
    _, acts = forward(net, X, y)
    caches = store_activations(acts, cfg, net.version)
    return backward(net, loss_gradient(acts[-1], y), caches), caches


def test_zero_weights_give_log_classes():
    net = MlpNetwork.from_arrays([np.zeros((4, 3)), np.zeros((5, 4))], [np.zeros(4), np.zeros(5)])
    loss, acts = forward(net, np.ones((2, 3)), [0, 4])
    assert loss == pytest.approx(math.log(5), rel=1e-6)
    assert np.allclose(acts[-1], 0.2)


def test_hand_computed_two_two_two():
    net = MlpNetwork.from_arrays(
        [np.array([[1, 0], [0, -1]]), np.array([[1, 1], [0, 2]])], [np.zeros(2), np.array([0.5, 0])]
    )
    # h = relu([1, -2]) = [1, 0]; logits = [1.5, 0]; loss = log(1 + e^1.5).
    loss, acts = forward(net, np.array([[1, 2]]), [1])
    assert acts[1].tolist() == [[1, 0]]
    assert loss == pytest.approx(math.log1p(math.exp(1.5)), rel=1e-6)


def test_forward_shape_errors(small_net):
    with pytest.raises(DimensionError):
        forward(small_net, np.ones((2, 4)), [0, 1])
    with pytest.raises(DimensionError):
        forward(small_net, np.ones((2, 5)), [0, 1, 2])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_reports_diagnostics():
    net = MlpNetwork.from_arrays([np.full((2, 2), 3e38)], [np.zeros(2)])
    with pytest.raises(NumericError) as info:
        forward(net, np.full((1, 2), 3e38), [0])
    assert "max_abs_weight" in info.value.diagnostics


def test_network_shape_validation():
    with pytest.raises(DimensionError):
        MlpNetwork.from_arrays([np.ones((3, 2)), np.ones((2, 4))], [np.ones(3), np.ones(2)])


@pytest.mark.parametrize("name", list(CONFIGS))
def test_forward_is_independent_of_storage(small_net, small_batch, name):
    # Storage configs only touch the caches; the forward pass is always float32.
    X, y = small_batch
    (loss, acts), (loss2, acts2) = forward(small_net, X, y), forward(small_net, X, y)
    store_activations(acts, CONFIGS[name])
    assert loss == loss2 and all(np.array_equal(a, b) for a, b in zip(acts, acts2))


def test_local_gradients_bitwise_invariant(small_net, small_batch):
    X, y = small_batch
    reference, _ = run_backward(small_net, X, y, None)
    for cfg in CONFIGS.values():
        grads, _ = run_backward(small_net, X, y, cfg)
        for d_ref, d in zip(reference.deltas, grads.deltas):
            assert d.tobytes() == d_ref.tobytes()
        for b_ref, b in zip(reference.biases, grads.biases):
            assert b.tobytes() == b_ref.tobytes()


@pytest.mark.parametrize("name", ["3:2 masked", "2:0"])
def test_weight_gradient_error_bound(name):
    net = MlpNetwork.init([8, 16, 16, 4], seed=3)
    X = sample("gaussian(0,1)", (32, 8), RngStream(3))
    y = np.arange(32) % 4
    cfg = CONFIGS[name]
    exact, _ = run_backward(net, X, y, None)
    approx, caches = run_backward(net, X, y, cfg)
    _, acts = forward(net, X, y)
    for layer in range(1, net.n_layers):
        q = store_activations(acts, cfg).entries[layer]
        err = np.abs(dequantize(q) - acts[layer]).astype(np.float64)
        assert err[q.outlier_mask().reshape(err.shape)].max(initial=0) == 0
        # Elementwise activation error bounds the gradient error through |delta|.
        bound = np.abs(exact.deltas[layer]).astype(np.float64).T @ err
        diff = np.abs(approx.weights[layer].astype(np.float64) - exact.weights[layer])
        assert np.all(diff <= bound + 1e-6 * (1 + np.abs(exact.weights[layer])))
        if cfg.mode == "vquant":
            assert err.max() <= q.step / 2 + float(np.spacing(np.float32(q.qmax)))
    assert np.array_equal(approx.weights[0], exact.weights[0])


def test_finite_differences():
    net = MlpNetwork.init([3, 4, 3, 2], seed=5)
    net = net.replace(biases=[b + 0.1 for b in net.biases], bump=False)
    assert net.n_params <= 50
    X = sample("gaussian(0,1)", (4, 3), RngStream(12))
    y = np.array([0, 1, 1, 0])
    assert preactivation_margin(net, X) > 1e-2
    grads, _ = run_backward(net, X, y, None)
    fd_w, fd_b = central_differences(net, X, y)
    for g, fd in zip(grads.weights + grads.biases, fd_w + fd_b):
        assert relative_error(g.astype(np.float64), fd).max() <= 1e-3


def test_stale_cache(small_net, small_batch):
    X, y = small_batch
    _, acts = forward(small_net, X, y)
    caches = store_activations(acts, None, small_net.version)
    bumped = small_net.replace()
    with pytest.raises(StateError):
        backward(bumped, loss_gradient(acts[-1], y), caches)


def test_consumed_cache(small_net, small_batch):
    X, y = small_batch
    _, acts = forward(small_net, X, y)
    caches = store_activations(acts, None, small_net.version)
    backward(small_net, loss_gradient(acts[-1], y), caches)
    with pytest.raises(StateError):
        backward(small_net, loss_gradient(acts[-1], y), caches)


def test_negative_activation_rejected(small_net, small_batch):
    X, y = small_batch
    _, acts = forward(small_net, X, y)
    acts[1] = acts[1] - 1
    with pytest.raises(StateError):
        store_activations(acts, CONFIGS["3:2"])


def test_all_dead_layer():
    net = MlpNetwork.from_arrays([-np.ones((4, 3)), np.ones((2, 4))], [np.zeros(4), np.zeros(2)])
    _, acts = forward(net, np.ones((5, 3)), [0] * 5)
    caches = store_activations(acts, CONFIGS["3:2"])
    q = caches.entries[1]
    assert not q.unpacked_codes().any()
    assert caches.stored_bytes == stored_bytes(CONFIGS["3:2"], 20)


def test_outlier_count_on_large_activation():
    h = np.abs(sample("laplace(0,1)", (100, 100), RngStream(4)))
    caches = store_activations([np.zeros((100, 1)), h, np.zeros((100, 2))], CONFIGS["3:2"])
    assert len(caches.entries[1].outliers) == 200


def test_cached_activation_within_half_step():
    h = np.abs(sample("laplace(0,1)", (64, 32), RngStream(6)))
    q = store_activations([np.zeros((64, 1)), h, np.zeros((64, 2))], CONFIGS["3:2 masked"]).entries[1]
    assert np.abs(dequantize(q) - h).max() <= q.step / 2 + float(np.spacing(np.float32(q.qmax)))


@pytest.mark.parametrize("name,fraction", [("full", 1.0), ("3:2", 0.13375), ("3:2 masked", 0.165)])
def test_memory_accounting(small_net, small_batch, name, fraction):
    X, y = small_batch
    _, acts = forward(small_net, X, y)
    caches = store_activations(acts, CONFIGS[name])
    n_hidden = sum(a.size for a in acts[1:-1])
    assert caches.full_bytes == 4 * n_hidden
    assert caches.stored_bytes == round(fraction * 4 * n_hidden)


def test_sgd_zero_rate(small_net, small_batch):
    grads, _ = run_backward(small_net, *small_batch, None)
    stepped = sgd_step(small_net, grads, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(stepped.weights, small_net.weights))
    assert stepped.version == small_net.version + 1


def test_sgd_single_weight():
    net = MlpNetwork.from_arrays([np.array([[0.75]])], [np.array([0.0])])
    stepped = sgd_step(net, Gradients([np.array([[0.5]], np.float32)], [np.zeros(1, np.float32)]), 0.25)
    assert stepped.weights[0][0, 0] == np.float32(0.75) - np.float32(0.25) * np.float32(0.5)


def test_two_steps_differ_from_one_big_step(small_net, small_batch):
    X, y = small_batch
    net1, _, _ = train_step(small_net, X, y, None, 0.5)
    net2, _, _ = train_step(net1, X, y, None, 0.5)
    grads, _ = run_backward(small_net, X, y, None)
    big = sgd_step(small_net, grads, 1.0)
    assert not all(np.array_equal(a, b) for a, b in zip(net2.weights, big.weights))


def test_sgd_non_finite_gradient(small_net, small_batch):
    grads, _ = run_backward(small_net, *small_batch, None)
    grads.weights[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        sgd_step(small_net, grads, 0.1)


def test_save_load_roundtrip(tmp_path, small_net):
    small_net.save(tmp_path / "m")
    back = MlpNetwork.load(tmp_path / "m")
    assert all(np.array_equal(a, b) for a, b in zip(back.weights + back.biases, small_net.weights + small_net.biases))

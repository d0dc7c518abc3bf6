from __future__ import annotations

import numpy as np
import pytest

from depthprune import nn
from depthprune.data import gen_synthetic


def naive_forward(net, x):
    """Loop-based re-implementation used as an oracle."""
    h = np.asarray(x, dtype=np.float64)
    for layer in net.layers:
        w = layer.effective_weights.astype(np.float64)
        b = layer.bias.astype(np.float64)
        if layer.kind == "dense":
            h = h.reshape(len(h), -1)
            z = np.zeros((len(h), layer.n_out))
            for n in range(len(h)):
                for o in range(layer.n_out):
                    z[n, o] = sum(w[o, i] * h[n, i] for i in range(layer.n_in)) + b[o]
        else:
            k, s, p = layer.kernel, layer.stride, layer.padding
            hp = np.pad(h, ((0, 0), (0, 0), (p, p), (p, p)))
            ho = (hp.shape[2] - k) // s + 1
            wo = (hp.shape[3] - k) // s + 1
            z = np.zeros((len(h), layer.n_out, ho, wo))
            for n in range(len(h)):
                for o in range(layer.n_out):
                    for i in range(ho):
                        for j in range(wo):
                            patch = hp[n, :, i * s : i * s + k, j * s : j * s + k]
                            z[n, o, i, j] = np.sum(patch * w[o]) + b[o]
        h = layer.activation(z)
    return h


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "gelu", "silu", "relu6"])
def test_forward_matches_naive_mlp(act, rng):
    net = nn.mlp([3, 5, 4, 2], act, seed=3)
    x = rng.standard_normal((6, 3)).astype(np.float32)
    out, pre = nn.forward(net, x, record_preacts=True)
    assert out.shape == (6, 2)
    assert len(pre) == 2
    np.testing.assert_allclose(out, naive_forward(net, x), atol=1e-6)


def test_forward_matches_naive_conv(rng):
    r = np.random.default_rng(1)
    net = nn.Network([
        nn.conv2d(2, 3, 3, stride=2, padding=1, rng=r),
        nn.conv2d(3, 2, 2, stride=1, padding=0, activation="prelu", rng=r),
        nn.dense(2 * 2 * 2, 2, "identity", r),
    ])
    x = rng.standard_normal((3, 2, 5, 5)).astype(np.float32)
    np.testing.assert_allclose(nn.forward(net, x)[0], naive_forward(net, x), atol=1e-5)


def test_masked_weights_do_not_contribute(rng):
    net = nn.mlp([4, 3, 2], seed=0)
    x = rng.standard_normal((5, 4)).astype(np.float32)
    net.layers[0].mask[1, 2] = 0
    before = nn.forward(net, x)[0]
    net.layers[0].weights[1, 2] = 1e6
    np.testing.assert_allclose(nn.forward(net, x)[0], before)


def test_final_layer_must_be_linear():
    with pytest.raises(nn.ShapeError):
        nn.Network([nn.dense(2, 2, "relu")])


def test_shape_mismatch_raises():
    net = nn.mlp([3, 4, 2])
    with pytest.raises(nn.ShapeError):
        nn.forward(net, np.zeros((2, 5), np.float32))


def test_non_finite_output_raises():
    net = nn.mlp([2, 2])
    net.layers[0].weights[:] = np.inf
    with pytest.raises(nn.NumericalError):
        nn.forward(net, np.ones((1, 2), np.float32))


def test_training_fits_separable_blobs():
    ds = gen_synthetic("blobs", 400, 0.0, seed=0)
    net = nn.mlp([2, 16, 16, 2], seed=0)
    nn.train(net, *ds.xy, nn.TrainConfig(epochs=50, lr=0.01, seed=0))
    assert nn.evaluate(net, *ds.xy) >= 0.99


def test_training_is_deterministic():
    ds = gen_synthetic("moons", 200, 0.1, seed=2)
    nets = []
    for _ in range(2):
        net = nn.mlp([2, 8, 2], seed=1)
        nn.train(net, *ds.xy, nn.TrainConfig(epochs=3, lr=0.05, seed=7))
        nets.append(net)
    for a, b in zip(nets[0].layers, nets[1].layers):
        assert a.weights.tobytes() == b.weights.tobytes()


def test_training_keeps_masked_weights_zero():
    ds = gen_synthetic("moons", 200, 0.1, seed=2)
    net = nn.mlp([2, 8, 2], seed=1)
    net.layers[0].mask[::2] = 0
    net.layers[0].weights *= net.layers[0].mask
    nn.train(net, *ds.xy, nn.TrainConfig(epochs=3, lr=0.05, weight_decay=1e-3))
    assert np.all(net.layers[0].weights[::2] == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = gen_synthetic("blobs", 64, 0.0, seed=0)
    net = nn.mlp([2, 8, 2], seed=0)
    with pytest.raises((nn.TrainingDiverged, nn.NumericalError)):
        nn.train(net, ds.inputs * 1e30, ds.labels, nn.TrainConfig(epochs=2, lr=1e10))


def test_evaluate_ties_go_to_lowest_class():
    net = nn.mlp([2, 2])
    net.layers[0].weights[:] = 0
    net.layers[0].bias[:] = 0
    assert nn.evaluate(net, np.zeros((3, 2), np.float32), np.array([0, 0, 0])) == 1.0


def test_cross_entropy_gradient_by_hand():
    logits = np.array([[1.0, 2.0, 0.5]])
    loss, d = nn.softmax_cross_entropy(logits, np.array([1]))
    p = np.exp(logits) / np.exp(logits).sum()
    assert loss == pytest.approx(-np.log(p[0, 1]))
    np.testing.assert_allclose(d, p - np.array([[0, 1, 0]]), atol=1e-12)


@pytest.mark.parametrize("act", ["gelu", "silu", "leaky_relu", "prelu", "relu"])
def test_grad_check_dense(act, rng):
    net = nn.mlp([3, 6, 5, 3], act, seed=4)
    x = rng.standard_normal((8, 3))
    assert nn.grad_check(net, x, labels=np.arange(8) % 3) < 1e-3


def test_grad_check_conv(rng):
    r = np.random.default_rng(0)
    net = nn.Network([
        nn.conv2d(1, 3, 3, stride=1, padding=1, activation="silu", rng=r),
        nn.conv2d(3, 2, 3, stride=2, padding=1, activation="relu", rng=r),
        nn.dense(2 * 3 * 3, 2, "identity", r),
    ])
    x = rng.standard_normal((4, 1, 6, 6))
    assert nn.grad_check(net, x, labels=np.array([0, 1, 1, 0])) < 1e-3


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        nn.grad_check(nn.mlp([2, 2]), np.zeros((1, 2)), eps=1.0)

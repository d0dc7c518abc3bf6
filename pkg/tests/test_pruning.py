from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthprune import nn
from depthprune.data import gen_synthetic, split
from depthprune.entropy import EntropyReport, StateStats, probe
from depthprune.pruning import (
    BudgetError,
    PruneConfig,
    allocate,
    compute_budget,
    imp_step,
    irrelevance,
    largest_remainder,
    nepenthe_loop,
    prune_step,
    relevance,
    softmax,
)


def dense_layer(w, act="relu"):
    w = np.asarray(w, np.float32)
    return nn.Layer("dense", w, np.zeros(len(w), np.float32), np.ones_like(w), nn.Activation(act))


def report_from_p(ps, layers=None):
    """Report whose neurons have ON probability ``ps`` (out of 4 observations)."""
    stats = []
    for k, p in enumerate(ps):
        on = np.round(np.asarray(p) * 4).astype(np.int64)
        stats.append(StateStats(layers[k] if layers else k, on, 4 - on, np.zeros_like(on)))
    return EntropyReport(0, stats)


def test_irrelevance_single_neuron():
    layer = dense_layer([[1.0, -1.0]])
    assert irrelevance(layer, np.array([1.0])) == pytest.approx(1.0)


def test_irrelevance_two_neurons():
    layer = dense_layer([[0.2, -0.2], [0.4, 0.4]])
    assert irrelevance(layer, np.array([1.0, 0.5])) == pytest.approx(0.2)


def test_irrelevance_ignores_pruned_weights():
    layer = dense_layer([[0.5, 0.0]])
    layer.mask[0, 1] = 0
    assert irrelevance(layer, np.array([1.0])) == pytest.approx(0.5)


def test_relevance_by_hand():
    np.testing.assert_allclose(relevance([1, 2, 3]), [6, 3, 2])
    np.testing.assert_allclose(relevance([0.0, 2.0]), [0.0, 1.0])


def test_allocate_hand_example():
    shares = 100 * np.exp([3, 1.5]) / np.exp([3, 1.5]).sum()
    np.testing.assert_allclose(shares, [81.76, 18.24], atol=0.01)
    np.testing.assert_array_equal(allocate([3, 1.5], 100), [82, 18])


def test_softmax_is_shift_invariant():
    np.testing.assert_allclose(softmax([1000.0, 999.0]), softmax([1.0, 0.0]))


def test_largest_remainder_ties_favor_low_index():
    np.testing.assert_array_equal(largest_remainder(np.array([0.5, 0.5, 1.0]), 2), [1, 0, 1])


def test_allocate_clips_and_redistributes():
    q = allocate([5.0, 0.0, 0.0], 30, capacity=[10, 100, 100])
    assert q[0] == 10 and q.sum() == 30 and q[1] == q[2] == 10


def test_allocate_over_capacity():
    with pytest.raises(BudgetError):
        allocate([1.0, 1.0], 10, capacity=[3, 3])


def test_allocate_exclude_zero():
    q = allocate([2.0, 0.0], 5, capacity=[10, 10], exclude_zero=True)
    np.testing.assert_array_equal(q, [5, 0])


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(0, 50), min_size=1, max_size=6),
    st.data(),
)
def test_allocate_conserves_total(r, data):
    cap = data.draw(st.lists(st.integers(0, 500), min_size=len(r), max_size=len(r)))
    total = data.draw(st.integers(0, sum(cap)))
    q = allocate(r, total, cap)
    assert q.sum() == total
    assert np.all(q >= 0) and np.all(q <= np.array(cap))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=2, max_size=5), st.integers(0, 10_000))
def test_allocate_orders_by_relevance(r, total):
    q = allocate(r, total)
    share = softmax(r)
    for i in range(len(r)):
        for j in range(len(r)):
            if share[i] > share[j]:
                assert q[i] >= q[j]


def test_prune_step_smallest_first():
    net = nn.Network([dense_layer([[0.5, 0.1, 0.3]]), nn.dense(1, 1, "identity")])
    prune_step(net, report_from_p([[0.5]]), [2])
    np.testing.assert_array_equal(net.layers[0].mask, [[1, 0, 0]])
    assert net.layers[0].weights[0, 1] == 0


def test_prune_step_protects_zero_entropy_neuron():
    net = nn.Network([dense_layer([[0.01, 0.02], [0.5, 0.6]]), nn.dense(2, 1, "identity")])
    prune_step(net, report_from_p([[1.0, 0.5]]), [1])
    np.testing.assert_array_equal(net.layers[0].mask, [[1, 1], [0, 1]])


def test_prune_step_zero_quota_is_noop():
    net = nn.Network([dense_layer([[0.5, 0.1]]), nn.dense(1, 1, "identity")])
    prune_step(net, report_from_p([[0.5]]), [0])
    assert net.layers[0].mask.all()


def test_prune_step_rejects_excess_quota():
    net = nn.Network([dense_layer([[0.5, 0.1]]), nn.dense(1, 1, "identity")])
    with pytest.raises(BudgetError):
        prune_step(net, report_from_p([[0.5]]), [3])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_zero_entropy_neurons_never_newly_masked(seed):
    rng = np.random.default_rng(seed)
    net = nn.mlp([3, 6, 5, 2], seed=seed % 997)
    for li in net.prunable():
        m = rng.random(net.layers[li].mask.shape) < 0.2
        net.layers[li].mask[m] = 0
    ps = [rng.choice([0.0, 0.25, 0.5, 1.0], size=net.layers[li].n_out) for li in net.prunable()]
    rep = report_from_p(ps, net.prunable())
    budget = compute_budget(net, rep, float(rng.uniform(0.05, 0.95)))
    before = [net.layers[li].mask.copy() for li in net.prunable()]
    prune_step(net, rep, budget.quotas)
    removed = 0
    for k, li in enumerate(net.prunable()):
        frozen = rep.neuron_entropy[k] == 0
        np.testing.assert_array_equal(net.layers[li].mask[frozen], before[k][frozen])
        removed += int(before[k].sum() - net.layers[li].mask.sum())
    assert removed == budget.total == budget.quotas.sum()


def test_one_layer_agrees_with_imp():
    w = np.random.default_rng(0).standard_normal((4, 6)).astype(np.float32)
    a = nn.Network([dense_layer(w), nn.dense(4, 1, "identity")])
    b = a.copy()
    rep = report_from_p([[0.5, 0.25, 0.75, 0.5]])
    budget = compute_budget(a, rep, 0.5)
    prune_step(a, rep, budget.quotas)
    imp_step(b, 0.5)
    np.testing.assert_array_equal(a.layers[0].mask, b.layers[0].mask)


def test_imp_global_order():
    net = nn.Network([dense_layer([[0.9, 0.2]]), dense_layer([[0.1], [0.8]]), nn.dense(2, 1, "identity")])
    assert imp_step(net, 0.5) == 2
    np.testing.assert_array_equal(net.layers[0].mask, [[1, 0]])
    np.testing.assert_array_equal(net.layers[1].mask, [[0], [1]])


def test_imp_rounds_down_to_nothing():
    net = nn.Network([dense_layer([[0.9]]), nn.dense(1, 1, "identity")])
    assert imp_step(net, 0.5) == 0
    assert net.layers[0].mask.all()


def test_imp_halves_remaining():
    net = nn.mlp([4, 16, 16, 2])
    count = net.n_unpruned()
    for _ in range(4):
        imp_step(net, 0.5)
        assert net.n_unpruned() == count - math.floor(0.5 * count)
        count = net.n_unpruned()


@pytest.fixture(scope="module")
def blobs():
    ds = gen_synthetic("blobs", 600, 0.0, seed=0)
    return split(ds, seed=0)


def test_impossible_bar_returns_dense(blobs):
    tr, va, _ = blobs
    net = nn.mlp([2, 16, 16, 2], seed=0)
    res = nepenthe_loop(net, tr.xy, va.xy, nn.TrainConfig(epochs=5, lr=0.01), PruneConfig(theta=1.01))
    assert len(res.history) == 1
    assert res.accepted_iteration == 0
    assert res.net.n_unpruned() == net.n_unpruned()


def test_loop_trace_bookkeeping(blobs):
    tr, va, te = blobs
    net = nn.mlp([2, 16, 16, 2], seed=0)
    res = nepenthe_loop(
        net, tr.xy, va.xy, nn.TrainConfig(epochs=5, lr=0.01), PruneConfig(max_iterations=3, retrain_epochs=2),
        test_data=te.xy, keep_networks=True,
    )
    counts = [r.unpruned for r in res.history]
    assert all(b < a for a, b in zip(counts, counts[1:]))
    assert [r.report.iteration for r in res.history] == list(range(len(res.history)))
    assert len(res.networks) == len(res.history)
    bar = 0.97 * res.dense_acc
    acc = res.history[res.accepted_iteration]
    assert res.accepted_iteration == 0 or acc.val_acc > bar
    assert res.status in ("threshold", "max_iterations", "saturated")


def test_loop_toy_mlp_reaches_zero_entropy():
    """2-32-32-32-2 on blobs with zeta=0.5, theta=0.97: some iterate has a zero-entropy layer."""
    ds = gen_synthetic("blobs", 2000, 0.0, seed=0)
    tr, va, _ = split(ds, seed=0)
    net = nn.mlp([2, 32, 32, 32, 2], seed=0)
    res = nepenthe_loop(net, tr.xy, va.xy, nn.TrainConfig(epochs=20, lr=0.01), PruneConfig())
    assert len(res.history) <= 8
    assert any(r.report.removable() for r in res.history)


def test_prune_config_validation():
    with pytest.raises(ValueError):
        PruneConfig(zeta=1.5)
    with pytest.raises(ValueError):
        PruneConfig(method="random")

"""Unstructured pruning: global magnitude pruning (IMP) and the entropy-weighted
layer budget, plus the iterative prune / retrain loop that drives both."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .entropy import EntropyReport, probe
from .nn import Layer, Network, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

METHODS = ("nepenthe", "imp")


class BudgetError(ValueError):
    pass


@dataclass
class PruneConfig:
    zeta: float = 0.5
    theta: float = 0.97
    max_iterations: int = 7
    method: str = "nepenthe"
    retrain_epochs: int = 10
    retrain_lr: float | None = None
    exclude_zero_entropy_layers: bool = False
    eps_state: float = 0.0

    def __post_init__(self):
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class PruneBudget:
    layers: list[int]
    irrelevance: np.ndarray
    relevance: np.ndarray
    capacity: np.ndarray
    quotas: np.ndarray
    total: int


def neuron_mean_magnitude(layer: Layer) -> np.ndarray:
    """Mean |w| over the unpruned weights of each neuron (0 when none remain)."""
    w = np.abs(layer.neuron_weights()).astype(np.float64)
    m = layer.neuron_mask() != 0
    count = m.sum(axis=1)
    total = np.where(m, w, 0.0).sum(axis=1)
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def irrelevance(layer: Layer, neuron_entropy: np.ndarray) -> float:
    h = np.asarray(neuron_entropy, dtype=np.float64)
    return float(np.mean(h * neuron_mean_magnitude(layer)))


def relevance(irr) -> np.ndarray:
    irr = np.asarray(irr, dtype=np.float64)
    total = irr.sum()
    return np.divide(total, irr, out=np.zeros_like(irr), where=irr != 0)


def softmax(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    e = np.exp(r - r.max())
    return e / e.sum()


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Round non-negative real shares to integers summing to ``total``.

    Leftover units go to the largest fractional parts; ties favour lower indices.
    """
    base = np.floor(shares).astype(np.int64)
    left = total - int(base.sum())
    if left > 0:
        frac = shares - base
        order = np.argsort(-frac, kind="stable")
        base[order[:left]] += 1
    return base


def allocate(
    relevance_scores,
    total: int,
    capacity=None,
    exclude_zero: bool = False,
) -> np.ndarray:
    """Split ``total`` weights over layers proportionally to softmax(R).

    Layers whose share exceeds their capacity are clipped and the surplus is
    spread over the rest with the same softmax weights until exhausted.
    """
    r = np.asarray(relevance_scores, dtype=np.float64)
    n = len(r)
    if n == 0:
        raise BudgetError("no layers to allocate over")
    if total < 0:
        raise BudgetError("total must be non-negative")
    cap = np.full(n, np.inf) if capacity is None else np.asarray(capacity, dtype=np.float64)
    if exclude_zero:
        cap = np.where(r != 0, cap, 0.0)
    if total > cap.sum():
        raise BudgetError(f"budget {total} exceeds prunable capacity {cap.sum():g}")
    quotas = np.zeros(n, dtype=np.int64)
    active = cap > 0
    remaining = total
    while remaining > 0:
        # softmax restricted to the layers still open; same ratios as the full softmax
        share = np.zeros(n)
        share[active] = remaining * softmax(r[active])
        over = active & (share > cap - quotas)
        if over.any():
            for i in np.flatnonzero(over):
                room = int(cap[i] - quotas[i])
                quotas[i] += room
                remaining -= room
            active &= ~over
            continue
        quotas += largest_remainder(share, remaining)
        remaining = 0
    return quotas


def layer_capacity(layer: Layer, neuron_entropy: np.ndarray) -> int:
    """Unpruned weights belonging to neurons with non-zero entropy."""
    live = layer.neuron_mask() != 0
    return int(live[np.asarray(neuron_entropy) > 0].sum())


def compute_budget(net: Network, report: EntropyReport, zeta: float, exclude_zero: bool = False) -> PruneBudget:
    layers = report.layers
    irr = np.array(
        [irrelevance(net.layers[l], h) for l, h in zip(layers, report.neuron_entropy)]
    )
    rel = relevance(irr)
    cap = np.array([layer_capacity(net.layers[l], h) for l, h in zip(layers, report.neuron_entropy)])
    total = int(math.floor(zeta * net.n_unpruned()))
    if exclude_zero:
        usable = int(cap[rel != 0].sum())
    else:
        usable = int(cap.sum())
    total = min(total, usable)
    quotas = allocate(rel, total, cap, exclude_zero) if total else np.zeros(len(layers), dtype=np.int64)
    return PruneBudget(layers, irr, rel, cap, quotas, total)


def _mask_flat(layer: Layer, flat_idx: np.ndarray) -> None:
    m = layer.mask.reshape(-1).copy()
    m[flat_idx] = 0
    layer.mask = m.reshape(layer.mask.shape)
    layer.weights = layer.weights * layer.mask


def prune_step(net: Network, report: EntropyReport, quotas) -> None:
    """Mask the ``quota`` smallest-|w| unpruned weights of non-zero-entropy
    neurons in each layer, in place. Ties break by (neuron, weight) index."""
    for l, h, q in zip(report.layers, report.neuron_entropy, quotas):
        q = int(q)
        if q == 0:
            continue
        layer = net.layers[l]
        live = layer.neuron_mask() != 0
        cand = live & (np.asarray(h) > 0)[:, None]
        flat = np.flatnonzero(cand.reshape(-1))
        if q > len(flat):
            raise BudgetError(f"layer {l}: quota {q} exceeds {len(flat)} candidates")
        mags = np.abs(layer.weights.reshape(-1)[flat])
        order = np.argsort(mags, kind="stable")
        _mask_flat(layer, flat[order[:q]])


def imp_step(net: Network, zeta: float) -> int:
    """Global magnitude pruning over all prunable layers, in place.

    Removes floor(zeta * unpruned) weights; returns how many were masked.
    """
    idx = net.prunable()
    flats, mags, owners = [], [], []
    for l in idx:
        layer = net.layers[l]
        f = np.flatnonzero(layer.mask.reshape(-1))
        flats.append(f)
        mags.append(np.abs(layer.weights.reshape(-1)[f]))
        owners.append(np.full(len(f), l))
    all_mags = np.concatenate(mags)
    k = int(math.floor(zeta * len(all_mags)))
    if k == 0:
        return 0
    order = np.argsort(all_mags, kind="stable")[:k]
    all_flat = np.concatenate(flats)
    all_owner = np.concatenate(owners)
    for l in idx:
        sel = order[all_owner[order] == l]
        if len(sel):
            _mask_flat(net.layers[l], all_flat[sel])
    return k


@dataclass
class IterationRecord:
    iteration: int
    unpruned: int
    val_acc: float
    test_acc: float | None
    report: EntropyReport
    budget: PruneBudget | None = None
    accepted: bool = True


@dataclass
class LoopResult:
    net: Network
    report: EntropyReport
    dense_acc: float
    history: list[IterationRecord] = field(default_factory=list)
    status: str = "threshold"
    accepted_iteration: int = 0
    networks: list[Network] = field(default_factory=list)


def nepenthe_loop(
    net: Network,
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    train_cfg: TrainConfig,
    prune_cfg: PruneConfig,
    test_data: tuple[np.ndarray, np.ndarray] | None = None,
    pretrained: bool = False,
    keep_networks: bool = False,
    on_iteration: Callable[[IterationRecord, Network], None] | None = None,
) -> LoopResult:
    """Train, then alternately prune and retrain while validation accuracy
    stays above ``theta * dense_acc``.

    ``prune_cfg.method`` picks the entropy-weighted budget or plain global IMP.
    History entry 0 is the dense model; entry k is the model after iteration k.
    The returned network is the last one whose accuracy cleared the threshold.
    """
    x_tr, y_tr = train_data
    x_val, y_val = val_data
    if not pretrained:
        train(net, x_tr, y_tr, train_cfg)
    dense_acc = evaluate(net, x_val, y_val)
    current = dense_acc
    report = probe(net, x_tr, 0, prune_cfg.eps_state)
    test_acc = evaluate(net, *test_data) if test_data is not None else None
    rec = IterationRecord(0, net.n_unpruned(), dense_acc, test_acc, report)
    result = LoopResult(net.copy(), report, dense_acc, [rec])
    if keep_networks:
        result.networks.append(net.copy())
    if on_iteration:
        on_iteration(rec, net)

    bar = prune_cfg.theta * dense_acc
    iteration = 0
    retrain_cfg = replace(
        train_cfg,
        epochs=prune_cfg.retrain_epochs,
        lr=train_cfg.lr if prune_cfg.retrain_lr is None else prune_cfg.retrain_lr,
        lr_milestones=(),
    )
    status = "threshold"
    while current > bar:
        if iteration >= prune_cfg.max_iterations:
            status = "max_iterations"
            break
        iteration += 1
        budget = None
        if prune_cfg.method == "nepenthe":
            budget = compute_budget(net, report, prune_cfg.zeta, prune_cfg.exclude_zero_entropy_layers)
            if budget.total == 0:
                status = "saturated"
                log.info("iteration %d: nothing left to prune", iteration)
                break
            prune_step(net, report, budget.quotas)
        else:
            if imp_step(net, prune_cfg.zeta) == 0:
                status = "saturated"
                break
        train(net, x_tr, y_tr, replace(retrain_cfg, seed=train_cfg.seed + iteration))
        current = evaluate(net, x_val, y_val)
        report = probe(net, x_tr, iteration, prune_cfg.eps_state)
        test_acc = evaluate(net, *test_data) if test_data is not None else None
        ok = current > bar
        rec = IterationRecord(iteration, net.n_unpruned(), current, test_acc, report, budget, ok)
        result.history.append(rec)
        if keep_networks:
            result.networks.append(net.copy())
        log.info(
            "iteration %d: unpruned=%d val=%.4f removable=%s",
            iteration, rec.unpruned, current, report.removable(),
        )
        if on_iteration:
            on_iteration(rec, net)
        if ok:
            result.net = net.copy()
            result.report = report
            result.accepted_iteration = iteration
    result.status = status
    return result

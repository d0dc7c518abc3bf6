"""Fold zero-entropy layers into their successor.

A layer whose neurons are all constant-state on a reference dataset acts as an
affine map there: always-ON neurons pass z through, always-OFF neurons emit
0 (ReLU) or a scaled z (leaky variants). Composing that map with the next
dense layer removes one nonlinearity and one layer.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyReport
from .nn import Layer, Network, predict

ON, OFF, MIXED = "ON", "OFF", "MIXED"
EXACT = ("relu", "leaky_relu", "prelu")
APPROXIMATE = ("gelu", "silu")


class FoldError(ValueError):
    pass


def classify_neurons(report: EntropyReport, layer: int) -> np.ndarray:
    return _labels(report, report.for_layer(layer))


def _labels(report: EntropyReport, pos: int) -> np.ndarray:
    h = report.neuron_entropy[pos]
    p = report.p_on[pos]
    labels = np.full(len(h), MIXED, dtype=object)
    labels[(h == 0) & (p == 1)] = ON
    labels[(h == 0) & (p == 0)] = OFF
    return labels


def _off_scale(layer: Layer) -> np.ndarray:
    act = layer.activation
    n = layer.n_out
    if act.kind == "leaky_relu":
        return np.full(n, act.slope)
    if act.kind == "prelu":
        return act.alpha.astype(np.float64)
    return np.zeros(n)


def fold_layer(net: Network, l: int, report: EntropyReport) -> Network:
    """Return a new network with layer ``l`` merged into layer ``l + 1``."""
    if l not in report.layers:
        raise FoldError(f"layer {l} is not in the entropy report")
    return _fold(net, l, report, report.for_layer(l))


def _fold(net: Network, l: int, report: EntropyReport, pos: int) -> Network:
    if l < 0 or l >= len(net.layers) - 1:
        raise FoldError(f"layer {l} has no successor to fold into")
    layer, nxt = net.layers[l], net.layers[l + 1]
    if layer.kind != "dense" or nxt.kind != "dense":
        raise FoldError("only dense -> dense pairs can be folded")
    kind = layer.activation.kind
    if kind not in EXACT + APPROXIMATE:
        raise FoldError(f"cannot fold a {kind} layer")
    if report.layer_entropy[pos] != 0.0:
        raise FoldError(f"layer {l} has non-zero entropy {report.layer_entropy[pos]:.6g}")
    labels = _labels(report, pos)

    w = layer.effective_weights.astype(np.float64)
    b = layer.bias.astype(np.float64)
    scale = np.where(labels == ON, 1.0, _off_scale(layer))
    keep = scale != 0
    w_t = w[keep] * scale[keep, None]
    b_t = b[keep] * scale[keep]
    w_next = nxt.effective_weights.astype(np.float64)[:, keep]

    merged_w = (w_next @ w_t).astype(np.float32)
    merged_b = (w_next @ b_t + nxt.bias.astype(np.float64)).astype(np.float32)
    merged = Layer(
        "dense", merged_w, merged_b, np.ones_like(merged_w), copy.deepcopy(nxt.activation)
    )
    layers = [copy.deepcopy(x) for x in net.layers[:l]] + [merged]
    layers += [copy.deepcopy(x) for x in net.layers[l + 2 :]]
    return Network(layers)


def max_deviation(a: Network, b: Network, inputs: np.ndarray) -> float:
    if inputs is None or len(inputs) == 0:
        return float("nan")
    return float(np.max(np.abs(predict(a, inputs).astype(np.float64) - predict(b, inputs))))


@dataclass
class FoldStep:
    original_layer: int
    activation: str
    labels: dict
    merged_shape: tuple
    dev_reference: float
    dev_heldout: float
    exact: bool


@dataclass
class FoldResult:
    net: Network
    removed: int
    steps: list[FoldStep] = field(default_factory=list)
    dev_reference: float = 0.0
    dev_heldout: float = float("nan")

    def manifest(self) -> dict:
        return {
            "removed": self.removed,
            "max_deviation_reference": self.dev_reference,
            "max_deviation_heldout": self.dev_heldout,
            "layers": [
                {
                    "original_layer": s.original_layer,
                    "activation": s.activation,
                    "neurons": s.labels,
                    "merged_shape": list(s.merged_shape),
                    "max_deviation_reference": s.dev_reference,
                    "max_deviation_heldout": s.dev_heldout,
                    "exact": s.exact,
                }
                for s in self.steps
            ],
        }


def foldable(net: Network, l: int, report_entropy: float) -> bool:
    if l >= len(net.layers) - 1 or report_entropy != 0.0:
        return False
    a, b = net.layers[l], net.layers[l + 1]
    return a.kind == "dense" and b.kind == "dense" and a.activation.kind in EXACT + APPROXIMATE


def fold_all(
    net: Network,
    report: EntropyReport,
    reference: np.ndarray | None = None,
    heldout: np.ndarray | None = None,
) -> FoldResult:
    """Fold every foldable zero-entropy layer, first to last.

    The merged layer inherits the successor's pre-activations on the reference
    set, so the successor's report rows stay valid after each fold.
    """
    # network index -> report position, kept in sync as layers disappear
    rows = {l: i for i, l in enumerate(report.layers)}
    original = list(range(len(net.layers)))
    current = net
    result = FoldResult(net, 0)
    l = 0
    while l < len(current.layers):
        pos = rows.get(l)
        if pos is None or not foldable(current, l, report.layer_entropy[pos]):
            l += 1
            continue
        folded = _fold(current, l, report, pos)
        labels = _labels(report, pos)
        step = FoldStep(
            original_layer=original[l],
            activation=current.layers[l].activation.kind,
            labels={k: int(np.sum(labels == k)) for k in (ON, OFF, MIXED)},
            merged_shape=folded.layers[l].weights.shape,
            dev_reference=max_deviation(current, folded, reference) if reference is not None else float("nan"),
            dev_heldout=max_deviation(current, folded, heldout) if heldout is not None else float("nan"),
            exact=current.layers[l].activation.kind in EXACT,
        )
        result.steps.append(step)
        current = folded
        del original[l]
        rows = {(k - 1 if k > l else k): v for k, v in rows.items() if k != l}
        result.removed += 1
    result.net = current
    if reference is not None:
        result.dev_reference = max_deviation(net, current, reference)
    if heldout is not None:
        result.dev_heldout = max_deviation(net, current, heldout)
    return result


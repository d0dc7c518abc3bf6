"""Small deterministic feed-forward network core.

Dense and 2-D convolution layers with rectifier activations, per-weight prune
masks, hand-written reverse-mode gradients and SGD training. Tensors are plain
numpy arrays; networks are float32 unless explicitly cast (gradient checking
runs in float64).
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "leaky_relu", "prelu", "gelu", "silu", "relu6", "identity")

# tanh approximation of GELU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class NumericalError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Activation:
    kind: str = "relu"
    slope: float = 0.01
    # PReLU only: learned negative-side slope, one per output channel
    alpha: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("LeakyReLU slope must lie in (0, 1)")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def _alpha(self, z: np.ndarray) -> np.ndarray:
        # broadcast per-channel slope along axis 1
        shape = (1, -1) + (1,) * (z.ndim - 2)
        return self.alpha.astype(z.dtype).reshape(shape)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "relu":
            return np.maximum(z, 0)
        if k == "leaky_relu":
            return np.where(z > 0, z, z * z.dtype.type(self.slope))
        if k == "prelu":
            return np.where(z > 0, z, z * self._alpha(z))
        if k == "gelu":
            u = GELU_C * (z + GELU_A * z**3)
            return 0.5 * z * (1.0 + np.tanh(u))
        if k == "silu":
            return z / (1.0 + np.exp(-z))
        if k == "relu6":
            return np.clip(z, 0, 6)
        return z

    def derivative(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        one = np.ones_like(z)
        if k == "relu":
            return (z > 0).astype(z.dtype)
        if k == "leaky_relu":
            return np.where(z > 0, one, z.dtype.type(self.slope))
        if k == "prelu":
            return np.where(z > 0, one, self._alpha(z) * one)
        if k == "gelu":
            u = GELU_C * (z + GELU_A * z**3)
            th = np.tanh(u)
            return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th**2) * GELU_C * (1.0 + 3.0 * GELU_A * z**2)
        if k == "silu":
            s = 1.0 / (1.0 + np.exp(-z))
            return s + z * s * (1.0 - s)
        if k == "relu6":
            return ((z > 0) & (z < 6)).astype(z.dtype)
        return one

    def alpha_grad(self, z: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Gradient of the loss w.r.t. the PReLU slopes."""
        contrib = np.where(z > 0, 0, z) * dy
        axes = (0,) + tuple(range(2, z.ndim))
        return contrib.sum(axis=axes)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope
        return d


@dataclass
class Layer:
    """One affine (dense) or convolution layer followed by its activation.

    Dense weights are stored ``(out, in)``; conv weights ``(out_ch, in_ch, k, k)``.
    Row ``i`` of the weights (after flattening trailing axes) holds the incoming
    weights of neuron / channel ``i``.
    """

    kind: str
    weights: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    activation: Activation = field(default_factory=Activation)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.mask.shape != self.weights.shape:
            raise ShapeError("mask must be congruent to weights")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("bias must have one entry per output unit")

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2] if self.kind == "conv2d" else 1

    @property
    def effective_weights(self) -> np.ndarray:
        return self.weights * self.mask

    def neuron_weights(self) -> np.ndarray:
        return self.weights.reshape(self.n_out, -1)

    def neuron_mask(self) -> np.ndarray:
        return self.mask.reshape(self.n_out, -1)

    def n_unpruned(self) -> int:
        return int(np.count_nonzero(self.mask))

    def describe(self) -> dict:
        d = {"kind": self.kind, "activation": self.activation.to_dict()}
        if self.kind == "dense":
            d.update({"in": self.n_in, "out": self.n_out})
        else:
            d.update(
                {
                    "in_ch": self.n_in,
                    "out_ch": self.n_out,
                    "k": self.kernel,
                    "stride": self.stride,
                    "pad": self.padding,
                }
            )
        return d


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int):
    bound = math.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    b_bound = 1.0 / math.sqrt(fan_in)
    b = rng.uniform(-b_bound, b_bound, size=shape[0]).astype(np.float32)
    return w, b


def dense(n_in: int, n_out: int, activation: Activation | str = "relu", rng=None) -> Layer:
    rng = rng if rng is not None else np.random.default_rng(0)
    act = Activation(activation) if isinstance(activation, str) else activation
    w, b = _kaiming_uniform(rng, (n_out, n_in), n_in)
    if act.kind == "prelu" and act.alpha is None:
        act.alpha = np.full(n_out, 0.25, dtype=np.float32)
    return Layer("dense", w, b, np.ones_like(w), act)


def conv2d(
    in_ch: int,
    out_ch: int,
    k: int,
    stride: int = 1,
    padding: int = 0,
    activation: Activation | str = "relu",
    rng=None,
) -> Layer:
    rng = rng if rng is not None else np.random.default_rng(0)
    act = Activation(activation) if isinstance(activation, str) else activation
    w, b = _kaiming_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k)
    if act.kind == "prelu" and act.alpha is None:
        act.alpha = np.full(out_ch, 0.25, dtype=np.float32)
    return Layer("conv2d", w, b, np.ones_like(w), act, stride, padding)


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        if not self.layers[-1].activation.is_identity:
            raise ShapeError("the final layer must use the identity activation")

    def __len__(self) -> int:
        return len(self.layers)

    def prunable(self) -> list[int]:
        """Indices of the layers in the pruning list: every rectifier-activated layer."""
        return [i for i, layer in enumerate(self.layers) if not layer.activation.is_identity]

    def n_unpruned(self) -> int:
        return sum(self.layers[i].n_unpruned() for i in self.prunable())

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Network":
        net = self.copy()
        for layer in net.layers:
            layer.weights = layer.weights.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
            layer.mask = layer.mask.astype(dtype)
            if layer.activation.alpha is not None:
                layer.activation.alpha = layer.activation.alpha.astype(dtype)
        return net

    @property
    def dtype(self):
        return self.layers[0].weights.dtype


def mlp(sizes: Sequence[int], activation: Activation | str = "relu", seed: int = 0) -> Network:
    """Build a plain MLP ``sizes[0] -> ... -> sizes[-1]``; the output layer is linear."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        act = Activation("identity") if last else copy.deepcopy(
            Activation(activation) if isinstance(activation, str) else activation
        )
        layers.append(dense(a, b, act, rng))
    return Network(layers)


# --------------------------------------------------------------------------
# forward / backward


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, k, k)


def _affine(layer: Layer, x: np.ndarray) -> np.ndarray:
    w = layer.effective_weights
    if layer.kind == "dense":
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        if x.shape[1] != layer.n_in:
            raise ShapeError(f"dense layer expects {layer.n_in} inputs, got {x.shape[1]}")
        return x @ w.T + layer.bias
    if x.ndim != 4 or x.shape[1] != layer.n_in:
        raise ShapeError(f"conv layer expects (N, {layer.n_in}, H, W) input, got {x.shape}")
    win = _windows(x, layer.kernel, layer.stride, layer.padding)
    z = np.einsum("nchwij,ocij->nohw", win, w)
    return z + layer.bias.reshape(1, -1, 1, 1)


def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {what}")


def forward(
    net: Network, batch: np.ndarray, record_preacts: bool = False
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the network. With ``record_preacts`` the pre-activations of every
    prunable layer are returned in pruning-list order."""
    x = np.asarray(batch, dtype=net.dtype)
    preacts = []
    for layer in net.layers:
        z = _affine(layer, x)
        if record_preacts and not layer.activation.is_identity:
            preacts.append(z)
        x = layer.activation(z)
    _check_finite(x, "network output")
    return x, preacts


def predict(net: Network, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    out = [forward(net, inputs[i : i + batch_size])[0] for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out, axis=0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    logp = shifted - np.log(e.sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class Gradients:
    weights: list[np.ndarray]
    bias: list[np.ndarray]
    alpha: list[np.ndarray | None]


def loss_and_grads(net: Network, batch: np.ndarray, labels: np.ndarray) -> tuple[float, Gradients]:
    x = np.asarray(batch, dtype=net.dtype)
    cache = []
    for layer in net.layers:
        z = _affine(layer, x)
        cache.append((x, z))
        x = layer.activation(z)
    _check_finite(x, "network output")
    loss, dy = softmax_cross_entropy(x, labels)
    dy = dy.astype(net.dtype)

    n = len(net.layers)
    gw: list = [None] * n
    gb: list = [None] * n
    ga: list = [None] * n
    for idx in range(n - 1, -1, -1):
        layer = net.layers[idx]
        xin, z = cache[idx]
        act = layer.activation
        if act.kind == "prelu":
            ga[idx] = act.alpha_grad(z, dy)
        dz = dy * act.derivative(z)
        w = layer.effective_weights
        if layer.kind == "dense":
            flat = xin.reshape(xin.shape[0], -1)
            gw[idx] = (dz.T @ flat) * layer.mask
            gb[idx] = dz.sum(axis=0)
            if idx:
                dy = (dz @ w).reshape(xin.shape)
        else:
            win = _windows(xin, layer.kernel, layer.stride, layer.padding)
            gw[idx] = np.einsum("nohw,nchwij->ocij", dz, win) * layer.mask
            gb[idx] = dz.sum(axis=(0, 2, 3))
            if idx:
                dy = _conv_input_grad(layer, dz, xin.shape)
    _check_finite(np.array([loss]), "loss")
    return loss, Gradients(gw, gb, ga)


def _conv_input_grad(layer: Layer, dz: np.ndarray, in_shape: tuple) -> np.ndarray:
    n, c, h, w = in_shape
    p, s, k = layer.padding, layer.stride, layer.kernel
    ho, wo = dz.shape[2], dz.shape[3]
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dz.dtype)
    wt = layer.effective_weights
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.einsum(
                "nohw,oc->nchw", dz, wt[:, :, i, j]
            )
    return dxp[:, :, p : p + h, p : p + w]


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_milestones: tuple[int, ...] = ()
    lr_drop: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(self.lr_milestones)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ValueError("lr milestones must be strictly increasing")
        if not 0 < self.lr_drop <= 1:
            raise ValueError("lr_drop must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.lr * self.lr_drop**drops


@dataclass
class TrainStats:
    epoch_loss: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_loss[-1] if self.epoch_loss else float("nan")


def train(net: Network, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> TrainStats:
    """SGD with momentum on softmax cross-entropy, in place.

    Batch order comes from ``cfg.seed`` only, so identical inputs give
    bit-identical trajectories. Masked weights receive no gradient and stay 0.
    """
    inputs = np.asarray(inputs, dtype=net.dtype)
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    vel_w = [np.zeros_like(layer.weights) for layer in net.layers]
    vel_b = [np.zeros_like(layer.bias) for layer in net.layers]
    vel_a = [None if layer.activation.alpha is None else np.zeros_like(layer.activation.alpha) for layer in net.layers]
    dt = net.dtype.type
    mom, wd = dt(cfg.momentum), dt(cfg.weight_decay)
    stats = TrainStats()
    for epoch in range(cfg.epochs):
        lr = dt(cfg.lr_at(epoch))
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, g = loss_and_grads(net, inputs[idx], labels[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, step {stats.steps}")
            total += loss * len(idx)
            stats.steps += 1
            for i, layer in enumerate(net.layers):
                gw = g.weights[i] + wd * layer.weights
                vel_w[i] = mom * vel_w[i] + gw
                layer.weights = (layer.weights - lr * vel_w[i]) * layer.mask
                vel_b[i] = mom * vel_b[i] + g.bias[i]
                layer.bias = layer.bias - lr * vel_b[i]
                if g.alpha[i] is not None:
                    vel_a[i] = mom * vel_a[i] + g.alpha[i]
                    layer.activation.alpha = layer.activation.alpha - lr * vel_a[i]
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(f"mean loss became {epoch_loss} at epoch {epoch}")
        stats.epoch_loss.append(epoch_loss)
    return stats


def evaluate(net: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy in [0, 1]; ties go to the lowest class index."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = np.argmax(predict(net, np.asarray(inputs)), axis=1)
    return float(np.mean(pred == labels))


# --------------------------------------------------------------------------
# gradient check


def _activation_pattern(net: Network, batch: np.ndarray) -> list[np.ndarray]:
    return [np.sign(z) for z in forward(net, batch, record_preacts=True)[1]]


def grad_check(
    net: Network,
    batch: np.ndarray,
    eps: float = 1e-5,
    labels: np.ndarray | None = None,
    n_samples: int = 20,
    seed: int = 0,
    floor: float = 1e-7,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on a copy. Probes a random subsample of unmasked weights and
    biases (plus PReLU slopes) per layer; a probe whose perturbation flips any
    pre-activation sign is skipped since the loss is not differentiable there.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    net64 = net.astype(np.float64)
    batch = np.asarray(batch, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = rng.integers(0, net64.layers[-1].n_out, size=len(batch))
    _, grads = loss_and_grads(net64, batch, labels)
    pattern = _activation_pattern(net64, batch)

    def loss_of() -> float:
        return loss_and_grads(net64, batch, labels)[0]

    def probe(arr: np.ndarray, pos: tuple, analytic: float) -> float | None:
        old = arr[pos]
        arr[pos] = old + eps
        up, pat_up = loss_of(), _activation_pattern(net64, batch)
        arr[pos] = old - eps
        down, pat_dn = loss_of(), _activation_pattern(net64, batch)
        arr[pos] = old
        crossed = any(
            not (np.array_equal(a, b) and np.array_equal(a, c)) for a, b, c in zip(pattern, pat_up, pat_dn)
        )
        if crossed:
            return None
        numeric = (up - down) / (2 * eps)
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)

    worst = 0.0
    for i, layer in enumerate(net64.layers):
        live = np.argwhere(layer.mask != 0)
        if len(live):
            for r in rng.choice(len(live), size=min(n_samples, len(live)), replace=False):
                pos = tuple(live[r])
                err = probe(layer.weights, pos, float(grads.weights[i][pos]))
                worst = max(worst, err or 0.0)
        for r in rng.choice(layer.n_out, size=min(n_samples, layer.n_out), replace=False):
            err = probe(layer.bias, (int(r),), float(grads.bias[i][r]))
            worst = max(worst, err or 0.0)
        if layer.activation.alpha is not None:
            for r in range(len(layer.activation.alpha)):
                err = probe(layer.activation.alpha, (r,), float(grads.alpha[i][r]))
                worst = max(worst, err or 0.0)
    return worst

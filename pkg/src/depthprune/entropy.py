"""ON/OFF state statistics and neuron / layer entropy of rectifier networks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .nn import Network, forward


def neuron_states(preact: np.ndarray, eps_state: float = 0.0) -> np.ndarray:
    """+1 where z > eps_state, -1 where z < -eps_state, 0 otherwise."""
    z = np.asarray(preact)
    s = np.zeros(z.shape, dtype=np.int8)
    s[z > eps_state] = 1
    s[z < -eps_state] = -1
    return s


@dataclass
class StateStats:
    """Per-neuron state counts for one layer."""

    layer: int
    n_on: np.ndarray
    n_off: np.ndarray
    n_zero: np.ndarray

    @classmethod
    def empty(cls, layer: int, n_neurons: int) -> "StateStats":
        z = np.zeros(n_neurons, dtype=np.int64)
        return cls(layer, z.copy(), z.copy(), z.copy())

    @property
    def n_neurons(self) -> int:
        return len(self.n_on)

    @property
    def active(self) -> np.ndarray:
        return self.n_on + self.n_off

    @property
    def observations(self) -> np.ndarray:
        return self.n_on + self.n_off + self.n_zero

    def add(self, states: np.ndarray) -> None:
        """Accumulate states shaped (N, neurons) or (N, channels, H, W)."""
        axes = (0,) + tuple(range(2, states.ndim))
        self.n_on += (states > 0).sum(axis=axes)
        self.n_off += (states < 0).sum(axis=axes)
        self.n_zero += (states == 0).sum(axis=axes)

    def merge(self, other: "StateStats") -> "StateStats":
        return StateStats(
            self.layer, self.n_on + other.n_on, self.n_off + other.n_off, self.n_zero + other.n_zero
        )


def state_probability(stats: StateStats) -> np.ndarray:
    """ON probability per neuron; zero states are excluded and S == 0 gives 0."""
    s = stats.active
    p = np.zeros(stats.n_neurons, dtype=np.float64)
    nz = s != 0
    p[nz] = stats.n_on[nz] / s[nz]
    return p


def binary_entropy(p) -> np.ndarray | float:
    """Entropy in bits of a two-state variable, with 0 log 0 = 0."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("probability outside [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(arr > 0, arr * np.log2(arr), 0.0) + np.where(arr < 1, (1 - arr) * np.log2(1 - arr), 0.0))
    h = np.clip(h, 0.0, 1.0)
    return float(h) if h.ndim == 0 else h


def layer_entropy(neuron_entropy) -> float:
    h = np.asarray(neuron_entropy, dtype=np.float64)
    if h.size == 0:
        raise ValueError("layer has no neurons")
    return float(h.mean())


@dataclass
class EntropyReport:
    iteration: int
    stats: list[StateStats]
    p_on: list[np.ndarray] = field(init=False)
    neuron_entropy: list[np.ndarray] = field(init=False)
    layer_entropy: np.ndarray = field(init=False)

    def __post_init__(self):
        self.p_on = [state_probability(s) for s in self.stats]
        self.neuron_entropy = [np.atleast_1d(binary_entropy(p)) for p in self.p_on]
        self.layer_entropy = np.array([layer_entropy(h) for h in self.neuron_entropy])

    @property
    def layers(self) -> list[int]:
        return [s.layer for s in self.stats]

    def sizes(self) -> list[int]:
        return [s.n_neurons for s in self.stats]

    def for_layer(self, layer: int) -> int:
        """Position of network layer ``layer`` inside the report."""
        return self.layers.index(layer)

    def removable(self) -> list[int]:
        return [s.layer for s, h in zip(self.stats, self.layer_entropy) if h == 0.0]

    def neuron_rows(self) -> Iterable[tuple]:
        for s, p, h in zip(self.stats, self.p_on, self.neuron_entropy):
            for i in range(s.n_neurons):
                yield (self.iteration, s.layer, i, int(s.n_on[i]), int(s.n_off[i]), int(s.n_zero[i]), p[i], h[i])

    def layer_rows(self) -> Iterable[tuple]:
        for s, h in zip(self.stats, self.layer_entropy):
            yield (self.iteration, s.layer, s.n_neurons, float(h), int(h == 0.0))


def probe(
    net: Network,
    inputs: np.ndarray,
    iteration: int = 0,
    eps_state: float = 0.0,
    batch_size: int = 512,
) -> EntropyReport:
    """One pass over ``inputs`` counting the state of every prunable neuron.

    Conv channels pool their counts over every spatial position.
    """
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        raise ValueError("cannot probe an empty dataset")
    prunable = net.prunable()
    stats = [StateStats.empty(i, net.layers[i].n_out) for i in prunable]
    for start in range(0, len(inputs), batch_size):
        _, preacts = forward(net, inputs[start : start + batch_size], record_preacts=True)
        for st, z in zip(stats, preacts):
            st.add(neuron_states(z, eps_state))
    return EntropyReport(iteration, stats)


NEURON_HEADER = ("iteration", "layer", "neuron", "n_on", "n_off", "n_zero", "p_on", "H")
LAYER_HEADER = ("iteration", "layer", "N_l", "H_layer", "removable")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_reports(reports: list[EntropyReport], neuron_csv: str | Path, layer_csv: str | Path) -> None:
    with open(neuron_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NEURON_HEADER)
        for r in reports:
            w.writerows([_fmt(v) for v in row] for row in r.neuron_rows())
    with open(layer_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LAYER_HEADER)
        for r in reports:
            w.writerows([_fmt(v) for v in row] for row in r.layer_rows())

"""Neuron entropy as a function of the magnitude-pruning threshold.

Weights ~ N(mu, sigma^2) pruned below |w| <= t, inputs ~ N(0, 1), one
rectified neuron. The analytic route models the surviving pre-activation with
the Bessel-K_0 product density and gets P(Z > eps) in closed form through
Struve functions; the Monte Carlo route samples the masked product directly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..entropy import binary_entropy
from .special import bessel_k, erf, erfc, struve_bessel_integral

log = logging.getLogger(__name__)

DENSITY_MODES = ("as_written", "normalized")
MC_CONVENTIONS = ("complement", "probe")


@dataclass
class TheoryParams:
    mu_w: float = 0.0
    sigma_w: float = 1.0
    t_grid: np.ndarray = field(default_factory=lambda: np.round(np.arange(0.0, 3.0 + 1e-9, 0.05), 10))
    eps: float = 0.05
    mc_samples: int = 1_000_000
    rng_seed: int = 0
    # "complement": P(z > eps) over every sample, OFF is everything else.
    # "probe": z in [-eps, eps] is dropped from the count, as in entropy.probe.
    mc_convention: str = "complement"

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        if self.sigma_w <= 0:
            raise ValueError("sigma_w must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if np.any(self.t_grid < 0) or np.any(np.diff(self.t_grid) < 0):
            raise ValueError("t_grid must be non-negative and sorted ascending")
        if self.mc_convention not in MC_CONVENTIONS:
            raise ValueError(f"mc_convention must be one of {MC_CONVENTIONS}")


def pruning_rate(t: float, mu_w: float = 0.0, sigma_w: float = 1.0) -> float:
    """Gaussian mass inside [-t, t]: the fraction of weights a threshold t prunes."""
    if t < 0:
        raise ValueError("t must be non-negative")
    s = sigma_w * math.sqrt(2.0)
    return 0.5 * (erf((t - mu_w) / s) - erf((-t - mu_w) / s))


def q_factor(t: float) -> float:
    """1 - erf(t / sqrt 2): surviving fraction of unit-variance weights."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return erfc(t / math.sqrt(2.0))


def preact_density(z: float, t: float, mode: str = "normalized") -> float:
    """Continuous part of the pre-activation density, (1/pi) K_0(|z/q|).

    ``as_written`` integrates to q(t); ``normalized`` divides by q(t) so it
    integrates to one.
    """
    if mode not in DENSITY_MODES:
        raise ValueError(f"mode must be one of {DENSITY_MODES}")
    if z == 0:
        raise ValueError("density diverges at z = 0")
    q = q_factor(t)
    if q == 0.0:
        return 0.0
    f = bessel_k(0, abs(z / q)) / math.pi
    return f / q if mode == "normalized" else f


def p_positive(t: float, eps: float) -> float:
    """1/2 [1 - I(eps / q(t))] with I(x) = x [L_-1 K_0 + L_0 K_1](x)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    q = q_factor(t)
    if q == 0.0:
        log.warning("q(t) underflows at t=%g; P(Z > eps) saturates at 0", t)
        return 0.0
    return 0.5 * (1.0 - struve_bessel_integral(eps / q))


@dataclass
class TheoryCurve:
    t: np.ndarray
    zeta: np.ndarray
    q: np.ndarray
    p_pos: np.ndarray
    entropy_analytic: np.ndarray
    p_pos_mc: np.ndarray | None = None
    entropy_mc: np.ndarray | None = None
    mc_stderr: np.ndarray | None = None
    prune_fraction_mc: np.ndarray | None = None

    def rows(self):
        n = len(self.t)
        nan = np.full(n, np.nan)
        pmc = self.p_pos_mc if self.p_pos_mc is not None else nan
        hmc = self.entropy_mc if self.entropy_mc is not None else nan
        se = self.mc_stderr if self.mc_stderr is not None else nan
        for i in range(n):
            yield (self.t[i], self.zeta[i], self.q[i], self.p_pos[i], self.entropy_analytic[i], pmc[i], hmc[i], se[i])


CURVE_HEADER = ("t", "zeta", "q", "p_pos_analytic", "H_analytic", "p_pos_mc", "H_mc", "mc_stderr")


@dataclass
class MonteCarloResult:
    p_pos: np.ndarray
    entropy: np.ndarray
    stderr: np.ndarray
    prune_fraction: np.ndarray


def mc_oracle(params: TheoryParams) -> MonteCarloResult:
    """Sample masked weights times unit-Gaussian inputs at each threshold.

    Each grid point draws from its own stream seeded by (rng_seed, index).
    """
    n = int(params.mc_samples)
    if n < 1:
        raise ValueError("mc_samples must be positive")
    eps = params.eps
    p, h, se, frac = [], [], [], []
    for idx, t in enumerate(params.t_grid):
        rng = np.random.default_rng(np.random.SeedSequence([params.rng_seed, idx]))
        w = rng.normal(params.mu_w, params.sigma_w, n)
        pruned = np.abs(w) <= t
        w[pruned] = 0.0
        z = w * rng.standard_normal(n)
        on = int(np.count_nonzero(z > eps))
        if params.mc_convention == "probe":
            counted = on + int(np.count_nonzero(z < -eps))
        else:
            counted = n
        if counted == 0:
            raise ValueError(f"every sample fell in [-eps, eps] at t={t:g}")
        pk = on / counted
        p.append(pk)
        h.append(binary_entropy(pk))
        se.append(math.sqrt(pk * (1 - pk) / counted))
        frac.append(pruned.mean())
    return MonteCarloResult(np.array(p), np.array(h), np.array(se), np.array(frac))


def entropy_curve(params: TheoryParams, monte_carlo: bool = True) -> TheoryCurve:
    t = params.t_grid
    zeta = np.array([pruning_rate(x, params.mu_w, params.sigma_w) for x in t])
    q = np.array([q_factor(x) for x in t])
    p = np.array([p_positive(x, params.eps) for x in t])
    curve = TheoryCurve(t, zeta, q, p, np.asarray(binary_entropy(p)))
    if monte_carlo:
        mc = mc_oracle(params)
        curve.p_pos_mc = mc.p_pos
        curve.entropy_mc = mc.entropy
        curve.mc_stderr = mc.stderr
        curve.prune_fraction_mc = mc.prune_fraction
    return curve


def write_curve_csv(curve: TheoryCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in curve.rows():
            w.writerow(["" if math.isnan(v) else f"{v:.10g}" for v in row])

"""Double-precision erf, modified Bessel K_0/K_1 and modified Struve L_{-1}/L_0.

Method per function:

* erf: all-positive series ``erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!``
  for |x| < 2.5, continued fraction for erfc beyond.
* K_0, K_1: ascending series for x <= 2; Steed's continued fraction (Temme's
  CF2 form) for x > 2.
* L_{-1}, L_0: ascending series. Every term is positive, so summation with
  ``math.fsum`` carries no cancellation; valid until exp overflow (x ~ 700).
"""
from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
ERF_SWITCH = 2.5
K_SWITCH = 2.0
_EPS = 1e-17
_MAXIT = 10_000


def _erf_series(x: float) -> float:
    # x >= 0
    x2 = x * x
    term = x
    total = x
    n = 0
    while term > _EPS * total:
        n += 1
        term *= 2.0 * x2 / (2 * n + 1)
        total += term
    return 2.0 / math.sqrt(math.pi) * math.exp(-x2) * total


def _erfc_cf(x: float) -> float:
    # erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), x > 0
    tiny = 1e-300
    f = x
    c = x
    d = 0.0
    for n in range(1, _MAXIT):
        a = n / 2.0
        d = x + a * d
        d = tiny if d == 0 else d
        c = x + a / c
        c = tiny if c == 0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x * x) / math.sqrt(math.pi) / f


def erf(x: float) -> float:
    x = float(x)
    if math.isnan(x):
        return math.nan
    a = abs(x)
    if a < ERF_SWITCH:
        v = _erf_series(a)
    elif a > 6.0:
        v = 1.0
    else:
        v = 1.0 - _erfc_cf(a)
    return math.copysign(v, x)


def erfc(x: float) -> float:
    x = float(x)
    if x < ERF_SWITCH:
        return 1.0 - erf(x)
    if x > 27.0:
        return 0.0
    return _erfc_cf(x)


def _i0_i1_series(x: float) -> tuple[float, float]:
    y = x * x / 4.0
    t0 = 1.0
    t1 = x / 2.0
    s0, s1 = [t0], [t1]
    k = 0
    while True:
        k += 1
        t0 *= y / (k * k)
        t1 *= y / (k * (k + 1))
        s0.append(t0)
        s1.append(t1)
        if t0 < _EPS * s0[0] and t1 < _EPS * s1[0]:
            break
    return math.fsum(s0), math.fsum(s1)


def _k_series(x: float) -> tuple[float, float]:
    i0, i1 = _i0_i1_series(x)
    lg = math.log(x / 2.0)
    y = x * x / 4.0
    # psi(k+1) = -gamma + H_k
    h = 0.0
    term0 = []
    term1 = []
    pw = 1.0
    k = 0
    while True:
        psi_k1 = -EULER_GAMMA + h
        psi_k2 = psi_k1 + 1.0 / (k + 1)
        f0 = pw / (math.factorial(k) ** 2)
        f1 = pw / (math.factorial(k) * math.factorial(k + 1))
        term0.append(f0 * psi_k1)
        term1.append(f1 * (psi_k1 + psi_k2))
        if k > 2 and f1 * (abs(psi_k1) + abs(psi_k2)) < 1e-18:
            break
        k += 1
        h += 1.0 / k
        pw *= y
    k0 = -lg * i0 + math.fsum(term0)
    k1 = 1.0 / x + lg * i1 - (x / 4.0) * math.fsum(term1)
    return k0, k1


def _k_steed(x: float) -> tuple[float, float]:
    """Exponentially scaled e^x K_0(x), e^x K_1(x) for x > 2.

    Steed's algorithm on CF2 with nu = 0 (Numerical Recipes, bessik)."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1, q2 = 0.0, 1.0
    a1 = 0.25
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < 1e-17:
            break
    h = a1 * h
    k0 = math.sqrt(math.pi / (2.0 * x)) / s
    k1 = k0 * (x + 0.5 - h) / x
    return k0, k1


def bessel_k01(x: float) -> tuple[float, float]:
    x = float(x)
    if not x > 0:
        raise ValueError("K_n(x) requires x > 0")
    if x <= K_SWITCH:
        return _k_series(x)
    if x > 745.0:
        return 0.0, 0.0
    k0s, k1s = _k_steed(x)
    e = math.exp(-x)
    return k0s * e, k1s * e


def bessel_k(n: int, x: float) -> float:
    """Modified Bessel function of the second kind, orders 0 and 1."""
    if n not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    return bessel_k01(x)[n]


def struve_l(n: int, x: float) -> float:
    """Modified Struve function L_n(x) for n in {-1, 0}, x >= 0.

    Series: sum_k (x/2)^(2k+n+1) / (Gamma(k+3/2) Gamma(k+n+3/2)).
    """
    if n not in (-1, 0):
        raise ValueError("only orders -1 and 0 are supported")
    x = float(x)
    if x < 0:
        raise ValueError("L_n(x) requires x >= 0")
    if x == 0.0:
        return 2.0 / math.pi if n == -1 else 0.0
    half = x / 2.0
    y = half * half
    # k = 0 term
    term = half ** (n + 1) / (math.gamma(1.5) * math.gamma(n + 1.5))
    terms = [term]
    k = 0
    while True:
        k += 1
        term *= y / ((k + 0.5) * (k + n + 0.5))
        terms.append(term)
        if term < _EPS * terms[0] and term < _EPS * math.fsum(terms[-8:]):
            break
        if k > _MAXIT:
            break
    return math.fsum(terms)


def struve_bessel_integral(x: float) -> float:
    """I(x) = x [L_{-1}(x) K_0(x) + L_0(x) K_1(x)] = (2/pi) * integral_0^x K_0."""
    x = float(x)
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 0.0
    if x > 30.0:
        return 1.0 - k0_tail(x) * 2.0 / math.pi
    k0, k1 = bessel_k01(x)
    return x * (struve_l(-1, x) * k0 + struve_l(0, x) * k1)


_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(48)


def k0_tail(x: float) -> float:
    """integral_x^inf K_0(u) du via Gauss-Laguerre on K_0(x+s) e^s."""
    if x <= K_SWITCH:
        raise ValueError("k0_tail is only used for x > 2")
    vals = [_k_steed(x + s)[0] for s in _LAG_X]
    return math.exp(-x) * float(np.dot(_LAG_W, vals))

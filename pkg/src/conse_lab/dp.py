"""Differential-privacy primitives.

Two noise generators are provided:

* the Laplace mechanism, sampled by inverse CDF from a single uniform draw;
* ``Lap+``, an integer generator supported on ``{0, 1, 2, ...}`` that
  randomizes a nominal length ``m``.  Its output equals ``floor(m) + k`` with
  probability proportional to ``exp(-eps/2 * |k|)`` for ``k >= -floor(m)``.

The ``*_from_uniform`` kernels are numba-compiled so the elimination loop in
:mod:`conse_lab.policies` can call them without leaving nopython mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# Smallest positive double; substitutes a zero uniform draw.
_TINY = 5e-324


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@njit(cache=True, nogil=True)
def laplace_from_uniform(scale, u):
    """Inverse-CDF Laplace(0, scale) sample from a uniform ``u`` in [0, 1)."""
    if u <= 0.0:
        u = _TINY
    if u >= 0.5:
        return -scale * math.log1p(-2.0 * (u - 0.5))
    return scale * math.log(2.0 * u)


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    return float(laplace_from_uniform(scale, rng.random()))


def _lap_plus_consts(m_floor, eps):
    a = 0.5 * eps
    one_minus_q = -math.expm1(-a)
    q_tail = math.exp(-a * (m_floor + 1.0))
    norm = one_minus_q / (1.0 + math.exp(-a) - q_tail)
    return a, one_minus_q, q_tail, norm


_lap_plus_consts_jit = njit(cache=True, nogil=True)(_lap_plus_consts)


@njit(cache=True, nogil=True)
def lap_plus_from_uniform(m_floor, eps, u):
    """Inverse-CDF ``Lap+`` sample; returns ``floor(m) + k`` as a float.

    ``m_floor`` is ``floor(m)`` (non-negative).  Left branch covers
    ``k in [-m_floor, -1]``, right branch ``k >= 0``.
    """
    a, one_minus_q, q_tail, norm = _lap_plus_consts_jit(m_floor, eps)
    # P(k < 0) = norm * (q - q^(F+1)) / (1 - q)
    left_mass = norm * (math.exp(-a) - q_tail) / one_minus_q
    if u < left_mass:
        # smallest K in [-F, -1] with CDF(K) >= u; CDF(K) = norm (q^-K - q^(F+1)) / (1-q)
        s = u * one_minus_q / norm + q_tail
        i = math.floor(-math.log(s) / a) if s > 0.0 else m_floor
        if i > m_floor:
            i = m_floor
        if i < 1.0:
            i = 1.0
        return m_floor - i
    # survival above K >= 0 is norm q^(K+1) / (1-q)
    t = (1.0 - u) * one_minus_q / norm
    if t <= 0.0:
        t = _TINY
    k = math.ceil(-math.log(t) / a) - 1.0
    if k < 0.0:
        k = 0.0
    return m_floor + k


def lap_plus_pmf(m: float, epsilon: float, k: int) -> float:
    """P(Lap+(m) = floor(m) + k) for integer ``k >= -floor(m)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not m > 0:
        raise ValueError(f"m must be positive, got {m}")
    m_floor = math.floor(m)
    if k < -m_floor:
        raise ValueError(f"k={k} below support minimum {-m_floor}")
    a, _, _, norm = _lap_plus_consts(float(m_floor), epsilon)
    return norm * math.exp(-a * abs(k))


def lap_plus_sample(m: float, epsilon: float, rng: np.random.Generator) -> int:
    if not m > 0:
        raise ValueError(f"m must be positive, got {m}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return int(lap_plus_from_uniform(float(math.floor(m)), float(epsilon), rng.random()))


def lap_plus_interval_mass(m: float, epsilon: float, radius: int) -> float:
    """P(|Lap+(m) - floor(m)| <= radius), summed in closed form."""
    m_floor = math.floor(m)
    a, one_minus_q, _, norm = _lap_plus_consts(float(m_floor), epsilon)
    q = math.exp(-a)
    right = (1.0 - q ** (radius + 1)) / one_minus_q
    left_terms = min(radius, m_floor)
    left = q * (1.0 - q**left_terms) / one_minus_q
    return norm * (right + left)


def mechanism_ratio_audit(mechanism: str, **params) -> float:
    """Largest absolute log-probability ratio between adjacent inputs.

    ``laplace-mean`` (params ``R``, ``epsilon``): a mean of ``R`` rewards in
    [0, 1] released with Laplace noise of scale ``2 / (epsilon R)``; changing
    one reward moves the mean by at most ``1 / R``.  The density ratio is
    maximised for outputs beyond both means, giving exactly ``shift / scale``.

    ``lap-plus-shift`` (params ``m``, ``epsilon``, optional ``scan``): the
    ``Lap+`` output distributions for nominal lengths ``floor(m)`` and
    ``floor(m) + 1`` compared pointwise over the shared support, scanning
    ``scan`` values past the larger nominal length.
    """
    if mechanism == "laplace-mean":
        R = params["R"]
        eps = params["epsilon"]
        shift = 1.0 / R
        scale = 2.0 / (eps * R)
        # log-density gap (|z - s| - |z|) / b scanned over a grid that spans
        # both tails; it is flat at s / b for every z <= 0
        z = np.linspace(-10 * scale, 10 * scale + shift, 4001)
        gap = (np.abs(z - shift) - np.abs(z)) / scale
        return float(np.max(np.abs(gap)))
    if mechanism == "lap-plus-shift":
        m = params["m"]
        eps = params["epsilon"]
        scan = int(params.get("scan", 2000))
        f0 = math.floor(m)
        f1 = f0 + 1
        worst = 0.0
        # shared support is {0, 1, ...}; both pmfs are positive on it
        for y in range(0, f1 + scan + 1):
            gap = _lap_plus_logpmf(f0, eps, y - f0) - _lap_plus_logpmf(f1, eps, y - f1)
            worst = max(worst, abs(gap))
        return worst
    raise ValueError(f"unknown mechanism {mechanism!r}")


def _lap_plus_logpmf(m_floor: int, eps: float, k: int) -> float:
    a, _, _, norm = _lap_plus_consts(float(m_floor), eps)
    return math.log(norm) - a * abs(k)


def audit_table(
    m_values=(1, 2, 10, 1000),
    eps_values=(0.1, 1.0, 10.0),
    R_values=(1, 10, 100, 1000, 10000),
    audit_eps=(0.1, 0.5, 1.0, 2.0, 10.0),
) -> list[dict]:
    """Run every analytic privacy check; one dict per check with a ``passed`` flag."""
    rows = []
    for m in m_values:
        for eps in eps_values:
            total = _pmf_total(m, eps)
            err = abs(total - 1.0)
            rows.append(dict(check="lap_plus_normalization", params=f"m={m} eps={eps}",
                             value=err, bound=1e-9, passed=err < 1e-9))
    for R in R_values:
        for eps in audit_eps:
            ratio = mechanism_ratio_audit("laplace-mean", R=R, epsilon=eps)
            ok = abs(ratio - eps / 2) <= 1e-9
            rows.append(dict(check="laplace_mean_ratio", params=f"R={R} eps={eps}",
                             value=ratio, bound=eps / 2, passed=ok))
    for m in m_values:
        for eps in eps_values:
            ratio = mechanism_ratio_audit("lap-plus-shift", m=m, epsilon=eps)
            rows.append(dict(check="lap_plus_shift_ratio", params=f"m={m} eps={eps}",
                             value=ratio, bound=eps, passed=ratio <= eps * (1 + 1e-9)))
    return rows


def _pmf_total(m: float, eps: float) -> float:
    """Sum the pmf term by term until the remaining tail is below 1e-13."""
    m_floor = math.floor(m)
    a = 0.5 * eps
    total = math.fsum(lap_plus_pmf(m, eps, k) for k in range(-m_floor, 0))
    # geometric right tail: stop once norm * q^K / (1 - q) < 1e-13
    norm = lap_plus_pmf(m, eps, 0)
    one_minus_q = -math.expm1(-a)
    K = max(1, math.ceil((math.log(norm / one_minus_q) + 13 * math.log(10)) / a))
    total += math.fsum(lap_plus_pmf(m, eps, k) for k in range(0, K + 1))
    return total

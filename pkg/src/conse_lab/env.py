"""Synthetic environments: Hölder-smooth reward pairs and hard instances.

Mean-reward functions take a batch of points of shape ``(k, d)`` and return
an array of length ``k``.  Arm 0 and arm 1 play the roles of control and
treatment; the treatment effect is ``cate(x) = f1(x) - f0(x)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

HOLDER_TOL = 1e-9


class InvalidParameter(ValueError):
    """A builder or configuration rejected a parameter; ``param`` names it."""

    def __init__(self, param: str, message: str):
        super().__init__(f"{param}: {message}")
        self.param = param


def as_points(x, d: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    d: int
    beta: float
    L: float
    f0: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray], np.ndarray]
    covariate_dist: str = "uniform"
    noise: str = "bernoulli"
    sigma: float = 0.1
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise InvalidParameter("d", f"must be a positive integer, got {self.d}")
        if not 0 < self.beta <= 1:
            raise InvalidParameter("beta", f"must lie in (0, 1], got {self.beta}")
        if not self.L > 0:
            raise InvalidParameter("L", f"must be positive, got {self.L}")
        if self.covariate_dist != "uniform":
            raise InvalidParameter("covariate_dist", f"unsupported {self.covariate_dist!r}")
        if self.noise not in ("bernoulli", "truncated_gaussian"):
            raise InvalidParameter("noise", f"unsupported {self.noise!r}")
        if self.noise == "truncated_gaussian" and not self.sigma > 0:
            raise InvalidParameter("sigma", f"must be positive, got {self.sigma}")

    def mean(self, arm: int, x) -> np.ndarray:
        pts = as_points(x, self.d)
        return np.asarray(self.f1(pts) if arm == 1 else self.f0(pts), dtype=float)

    def cate(self, x) -> np.ndarray:
        pts = as_points(x, self.d)
        return np.asarray(self.f1(pts), dtype=float) - np.asarray(self.f0(pts), dtype=float)


# --- sampling -------------------------------------------------------------

def sample_covariate(spec: EnvironmentSpec, rng: np.random.Generator, size: int | None = None):
    """One covariate of shape ``(d,)``, or ``size`` of them as ``(size, d)``."""
    if size is None:
        return rng.random(spec.d)
    return rng.random((size, spec.d))


def _noisy(spec: EnvironmentSpec, means: np.ndarray, noise: np.ndarray) -> np.ndarray:
    if spec.noise == "bernoulli":
        return (noise < means).astype(float)
    return np.clip(means + spec.sigma * noise, 0.0, 1.0)


def _noise_draw(spec: EnvironmentSpec, rng: np.random.Generator, size):
    if spec.noise == "bernoulli":
        return rng.random(size)
    return rng.standard_normal(size)


def draw_reward(spec: EnvironmentSpec, x, arm: int, rng: np.random.Generator) -> float:
    mu = spec.mean(arm, x)
    return float(_noisy(spec, mu, _noise_draw(spec, rng, mu.shape))[0])


def potential_outcomes(spec: EnvironmentSpec, X: np.ndarray, rng: np.random.Generator):
    """Rewards of both arms at each row of ``X`` from one shared noise draw.

    Only one of the pair is ever revealed to a policy, so sharing the noise
    does not change any observable distribution.
    """
    noise = _noise_draw(spec, rng, len(X))
    return _noisy(spec, spec.mean(0, X), noise), _noisy(spec, spec.mean(1, X), noise)


# --- Hölder membership ------------------------------------------------------

@dataclass(frozen=True)
class HolderResult:
    passed: bool
    worst_ratio: float


def _pair_sample(d: int, count: int, rng: np.random.Generator, low=0.0, high=1.0):
    """Half independent pairs, half local pairs at log-uniform radii."""
    n_far = count // 2
    n_near = count - n_far
    span = high - low
    xa = low + span * rng.random((count, d))
    xb = np.empty_like(xa)
    xb[:n_far] = low + span * rng.random((n_far, d))
    direction = rng.standard_normal((n_near, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = span * 10.0 ** rng.uniform(-5.0, 0.0, size=(n_near, 1))
    xb[n_far:] = np.clip(xa[n_far:] + radius * direction, low, high)
    return xa, xb


def holder_check(spec: EnvironmentSpec, pair_count: int = 10_000, rng=None) -> HolderResult:
    """Worst observed |f(x) - f(x')| / (L |x - x'|^beta) over random pairs and arms."""
    if pair_count < 1:
        raise ValueError("pair_count must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    xa, xb = _pair_sample(spec.d, pair_count, rng)
    dist = np.linalg.norm(xa - xb, axis=1)
    keep = dist > 0
    xa, xb, dist = xa[keep], xb[keep], dist[keep]
    worst = 0.0
    for arm in (0, 1):
        diff = np.abs(spec.mean(arm, xa) - spec.mean(arm, xb))
        if len(diff):
            worst = max(worst, float(np.max(diff / (spec.L * dist**spec.beta))))
    return HolderResult(passed=worst <= 1.0 + HOLDER_TOL, worst_ratio=worst)


# --- elementary reward functions -------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, X):
        return np.full(len(X), self.value)


def _cubic_step(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class MixedGapArm:
    """1/2 + delta for x_1 left of the band, 1/2 - gap right of it, C^1 in between."""

    delta: float
    gap: float
    band_lo: float
    band_width: float

    def __call__(self, X):
        s = _cubic_step((X[:, 0] - self.band_lo) / self.band_width)
        return 0.5 + self.delta - (self.delta + self.gap) * s


@dataclass(frozen=True)
class SineArm:
    amplitude: float

    def __call__(self, X):
        return 0.5 + self.amplitude * np.sin(2.0 * np.pi * X[:, 0])


# --- named builders ----------------------------------------------------------

def constant_gap_value(L: float, beta: float) -> float:
    return min(0.25, L / 3.0**beta)


def build_mixed_gap_instance(d: int, beta: float, L: float, n: int,
                             small_gap_override: float | None = None) -> EnvironmentSpec:
    """Half small-gap, half constant-gap instance along the first coordinate.

    Arm 1 is better by ``delta = n ** (-beta / (2 beta + d))`` on the left,
    arm 0 is better by ``min(1/4, L / 3**beta)`` on the right.  The cubic band
    joining them is centred on ``x_1 = 1/2`` and is as narrow as Hölder
    membership allows: ``1.5 * ((delta + gap) / L) ** (1 / beta)``.
    """
    if n < 2:
        raise InvalidParameter("n", f"must be at least 2, got {n}")
    delta = n ** (-beta / (2.0 * beta + d)) if small_gap_override is None else small_gap_override
    gap = constant_gap_value(L, beta)
    if not delta > 0:
        raise InvalidParameter("small_gap_override", f"must be positive, got {delta}")
    if delta > gap:
        raise InvalidParameter("small_gap_override" if small_gap_override is not None else "n",
                               f"small gap {delta:.4g} exceeds constant gap {gap:.4g}")
    width = 1.5 * ((delta + gap) / L) ** (1.0 / beta)
    if width > 1.0:
        raise InvalidParameter("L", f"transition band of width {width:.4g} does not fit in [0, 1]")
    f1 = MixedGapArm(delta=delta, gap=gap, band_lo=0.5 - width / 2, band_width=width)
    return EnvironmentSpec(d=d, beta=beta, L=L, f0=Constant(0.5), f1=f1, name="mixed_gap",
                           params=dict(delta=delta, gap=gap, band_width=width))


def build_constant_gap_instance(d: int, beta: float, L: float, gap: float = 0.2) -> EnvironmentSpec:
    if not -1.0 <= gap <= 1.0:
        raise InvalidParameter("gap", f"must lie in [-1, 1], got {gap}")
    return EnvironmentSpec(d=d, beta=beta, L=L, f0=Constant(0.5 - gap / 2),
                           f1=Constant(0.5 + gap / 2), name="constant_gap", params=dict(gap=gap))


@functools.lru_cache(maxsize=None)
def _sine_holder_factor(beta: float) -> float:
    # sup_r 2 sin(pi min(r, 1/2)) / r^beta over r in (0, 1]
    r = np.linspace(1e-6, 1.0, 200_001)
    return float(np.max(2.0 * np.sin(np.pi * np.minimum(r, 0.5)) / r**beta))


def build_smooth_sine_instance(d: int, beta: float, L: float,
                               amplitude: float | None = None) -> EnvironmentSpec:
    """f0 = 1/2, f1 = 1/2 + A sin(2 pi x_1) with A = 0.2 unless that breaks Hölder."""
    limit = L / _sine_holder_factor(beta)
    if amplitude is None:
        amplitude = min(0.2, limit)
    elif abs(amplitude) > limit * (1 + HOLDER_TOL) or abs(amplitude) > 0.5:
        raise InvalidParameter("amplitude", f"{amplitude} exceeds Hölder limit {min(limit, 0.5):.4g}")
    return EnvironmentSpec(d=d, beta=beta, L=L, f0=Constant(0.5), f1=SineArm(amplitude),
                           name="smooth_sine", params=dict(amplitude=amplitude))


# --- hard family from the lower-bound construction ---------------------------

def _mollifier(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def bump_kernel(u) -> np.ndarray | float:
    """prod_i phi(12 u_i) with phi(t) = e * exp(-1 / (1 - t^2)) on |t| < 1.

    Infinitely differentiable, K(0) = 1, supported strictly inside
    [-1/12, 1/12]^d.  Accepts one point ``(d,)`` or a batch ``(k, d)``.
    """
    arr = np.asarray(u, dtype=float)
    if arr.ndim <= 1:
        return float(np.prod(_mollifier(12.0 * np.atleast_1d(arr))))
    return np.prod(_mollifier(12.0 * arr), axis=1)


@functools.lru_cache(maxsize=None)
def kernel_holder_seminorm(d: int, beta: float, pair_count: int = 100_000) -> float:
    """Monte Carlo estimate of sup |K(u) - K(u')| / |u - u'|^beta (fixed seed)."""
    rng = np.random.default_rng(20240611 + d)
    ua, ub = _pair_sample(d, pair_count, rng, low=-0.1, high=0.1)
    dist = np.linalg.norm(ua - ub, axis=1)
    keep = dist > 0
    diff = np.abs(bump_kernel(ua[keep]) - bump_kernel(ub[keep]))
    return float(np.max(diff / dist[keep] ** beta))


@dataclass(frozen=True)
class Codebook:
    word_length: int
    min_distance: int
    words: np.ndarray  # (J, N) uint8

    def __len__(self):
        return len(self.words)


def codebook_candidates(N: int, rng: np.random.Generator, budget: int | None = None) -> np.ndarray:
    """Candidate order used by :func:`vg_codebook`: all 2^N words shuffled when
    N <= 16, otherwise ``budget`` independent uniform words."""
    if N <= 16:
        ints = rng.permutation(1 << N)
        return ((ints[:, None] >> np.arange(N)) & 1).astype(np.uint8)
    budget = 1 << 14 if budget is None else budget
    return rng.integers(0, 2, size=(budget, N), dtype=np.uint8)


def vg_codebook(N: int, min_distance: int, rng: np.random.Generator,
                target: int | None = None, candidate_budget: int | None = None) -> Codebook:
    """Greedy Varshamov-Gilbert style codebook.

    Accepts each candidate whose Hamming distance to every accepted word is at
    least ``min_distance``.  Without an explicit target, short words (N <= 16)
    are searched exhaustively and longer ones stop at ``2 ** ceil(N / 8)``.
    """
    if not 1 <= min_distance <= N:
        raise ValueError(f"min_distance must lie in [1, {N}], got {min_distance}")
    if target is None and N > 16:
        target = 2 ** math.ceil(N / 8)
    cands = codebook_candidates(N, rng, candidate_budget)
    cap = len(cands) if target is None else min(target, len(cands))
    accepted = np.empty((cap, N), dtype=np.uint8)
    count = 0
    for word in cands:
        if count and np.min(np.count_nonzero(accepted[:count] != word, axis=1)) < min_distance:
            continue
        accepted[count] = word
        count += 1
        if count >= cap:
            break
    if count < 2:
        raise ValueError(f"codebook search found only {count} word(s) for N={N}")
    return Codebook(word_length=N, min_distance=min_distance, words=accepted[:count].copy())


@dataclass(frozen=True)
class HardInstanceParams:
    m: int
    omega: tuple
    v: tuple
    h: float | None = None
    c_L: float | None = None
    kernel: str = "mollifier"

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameter("m", f"must be a positive integer, got {self.m}")
        if self.kernel != "mollifier":
            raise InvalidParameter("kernel", f"unknown kernel {self.kernel!r}")
        if any(w not in (-1, 1) for w in self.omega):
            raise InvalidParameter("omega", "entries must be -1 or +1")
        if any(b not in (0, 1) for b in self.v):
            raise InvalidParameter("v", "entries must be 0 or 1")


def default_hard_params(n: int, d: int, beta: float, rng: np.random.Generator) -> HardInstanceParams:
    """m = ceil(n^(1/(2 beta + d))), random signs, and one random codebook word."""
    m = math.ceil(n ** (1.0 / (2.0 * beta + d)) - 1e-9)
    N = m**d
    omega = tuple(int(s) for s in rng.choice([-1, 1], size=N))
    if N >= 8:
        book = vg_codebook(N, math.ceil(N / 8), rng, target=min(2 ** math.ceil(N / 8), 64))
        v = tuple(int(b) for b in book.words[rng.integers(len(book))])
    else:
        v = tuple(int(b) for b in rng.integers(0, 2, size=N))
    return HardInstanceParams(m=m, omega=omega, v=v)


@dataclass(frozen=True)
class HardArm:
    """Arm 1 of the hard family: bumps on the two corner cubes, linear ramp between."""

    d: int
    m: int
    height: float
    base_e: float
    omega: np.ndarray
    v: np.ndarray

    def _bumps(self, X, mask, origin, weights):
        out = np.zeros(len(X))
        if not np.any(mask):
            return out
        Xs = X[mask]
        cells = np.clip(np.floor((Xs - origin) * 3 * self.m), 0, self.m - 1).astype(np.int64)
        centers = origin + (cells + 0.5) / (3 * self.m)
        k = cells @ (self.m ** np.arange(self.d, dtype=np.int64))
        out[mask] = self.height * weights[k] * bump_kernel(self.m * (Xs - centers))
        return out

    def __call__(self, X):
        progress = np.clip(3.0 * X.min(axis=1) - 1.0, 0.0, 1.0)
        f = 0.5 + (self.base_e - 0.5) * progress
        f += self._bumps(X, np.all(X <= 1 / 3, axis=1), 0.0, self.omega)
        f += self._bumps(X, np.all(X >= 2 / 3, axis=1), 2 / 3, self.v)
        return f


def build_appendix_hard_instance(params: HardInstanceParams, d: int, beta: float, L: float,
                                 pair_count: int = 10_000, max_halvings: int = 30) -> EnvironmentSpec:
    """Hard family member f_{omega, v} (arm 1) against the constant arm 0 = 1/2.

    On [0, 1/3]^d arm 1 is 1/2 plus signed bumps; on [2/3, 1]^d it sits at
    ``max(1/4, 1/2 - L / 3**beta)`` plus bumps selected by ``v``; elsewhere it
    ramps linearly in ``min_i x_i``.  ``c_L`` defaults to half the Hölder budget
    of a single bump and is halved until the pair passes :func:`holder_check`.
    """
    N = params.m**d
    if len(params.omega) != N:
        raise InvalidParameter("omega", f"needs {N} entries, got {len(params.omega)}")
    if len(params.v) != N:
        raise InvalidParameter("v", f"needs {N} entries, got {len(params.v)}")
    h = params.m ** (-beta) if params.h is None else params.h
    if not h > 0:
        raise InvalidParameter("h", f"must be positive, got {h}")
    base_e = max(0.25, 0.5 - L / 3.0**beta)
    if params.c_L is None:
        c_L = min(1.0, L / (2.0 * h * params.m**beta * kernel_holder_seminorm(d, beta)))
        auto = True
    else:
        c_L = params.c_L
        auto = False
    if not c_L > 0:
        raise InvalidParameter("c_L", f"must be positive, got {c_L}")
    omega = np.asarray(params.omega, dtype=float)
    v = np.asarray(params.v, dtype=float)
    rng = np.random.default_rng(0)
    for _ in range(max_halvings + 1):
        spec = EnvironmentSpec(
            d=d, beta=beta, L=L, f0=Constant(0.5),
            f1=HardArm(d=d, m=params.m, height=c_L * h, base_e=base_e, omega=omega, v=v),
            name="appendix_hard", params=dict(m=params.m, h=h, c_L=c_L, base_e=base_e))
        fits_below = base_e + c_L * h < 0.5
        if fits_below and holder_check(spec, pair_count, rng).passed:
            return spec
        if not auto:
            break
        c_L /= 2.0
    raise InvalidParameter("c_L", f"no bump scale keeps the pair in the Hölder class (last {c_L:.3g})")


def build_instance(name: str, d: int, beta: float, L: float, n: int, **params) -> EnvironmentSpec:
    """Instance lookup used by the sweep harness."""
    if name == "mixed_gap":
        return build_mixed_gap_instance(d, beta, L, n, params.pop("small_gap_override", None),
                                        **params)
    if name == "constant_gap":
        return build_constant_gap_instance(d, beta, L, **params)
    if name == "smooth_sine":
        return build_smooth_sine_instance(d, beta, L, **params)
    if name == "appendix_hard":
        seed = params.pop("instance_seed", 0)
        hard = default_hard_params(n, d, beta, np.random.default_rng(seed))
        return build_appendix_hard_instance(hard, d, beta, L, **params)
    raise InvalidParameter("instance", f"unknown instance {name!r}")


INSTANCE_NAMES = ("mixed_gap", "appendix_hard", "smooth_sine", "constant_gap")

"""Cumulative regret, integrated CATE error, and simple regret.

All population integrals share one deterministic rule: a 256-point midpoint
rule inside every bin of the relevant grid when d = 1, and a fixed
4096-point Halton set over the cube when d >= 2.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .binning import Grid, bin_center, bin_index
from .env import EnvironmentSpec, as_points

POINTS_PER_BIN_1D = 256
POINTS_ND = 4096


@dataclass(frozen=True, eq=False)
class CateEstimate:
    """Piecewise-constant treatment-effect estimate on a grid."""

    grid: Grid
    values: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.total or len(self.degenerate) != self.grid.total:
            raise ValueError("estimate arrays must have one entry per grid bin")

    def __call__(self, x) -> np.ndarray:
        return self.values[np.atleast_1d(bin_index(self.grid, as_points(x, self.grid.d)))]

    @property
    def degenerate_count(self) -> int:
        return int(np.count_nonzero(self.degenerate))


@dataclass(frozen=True, eq=False)
class DeploymentPolicy:
    """Post-experiment policy: one arm per bin of ``grid``."""

    grid: Grid
    arms: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return self.arms[np.atleast_1d(bin_index(self.grid, as_points(x, self.grid.d)))]


@dataclass
class RunMetrics:
    cumulative_regret: float
    mise: float
    simple_regret: float
    wallclock: float = 0.0
    regret_curve: np.ndarray | None = None


@functools.lru_cache(maxsize=32)
def _halton(d: int, count: int) -> np.ndarray:
    pts = qmc.Halton(d=d, scramble=False).random(count + 1)[1:]
    pts.setflags(write=False)
    return pts


def quadrature_nodes(grid: Grid, density: int = 1):
    """Nodes and weights integrating over uniform [0, 1]^d.

    ``density`` multiplies the node count (used for convergence checks).
    """
    if grid.d == 1:
        per_bin = POINTS_PER_BIN_1D * density
        count = per_bin * grid.per_dim
        nodes = ((np.arange(count) + 0.5) / count).reshape(-1, 1)
        return nodes, np.full(count, 1.0 / count)
    count = POINTS_ND * density
    return _halton(grid.d, count), np.full(count, 1.0 / count)


def instantaneous_regret(spec: EnvironmentSpec, x, arms) -> np.ndarray:
    """max(f0, f1)(x) - f_arm(x), elementwise over a batch."""
    pts = as_points(x, spec.d)
    m0 = spec.mean(0, pts)
    m1 = spec.mean(1, pts)
    arms = np.broadcast_to(np.asarray(arms), m0.shape)
    chosen = np.where(arms == 1, m1, m0)
    return np.maximum(m0, m1) - chosen


def accumulate_regret(spec: EnvironmentSpec, x, arm: int) -> float:
    return float(instantaneous_regret(spec, x, arm)[0])


def mise(estimate: CateEstimate, spec: EnvironmentSpec, density: int = 1) -> float:
    """Integrated squared error of the estimate against the true CATE."""
    if spec.covariate_dist != "uniform":
        raise NotImplementedError(f"covariate distribution {spec.covariate_dist!r}")
    nodes, weights = quadrature_nodes(estimate.grid, density)
    err = estimate(nodes) - spec.cate(nodes)
    return float(np.dot(weights, err * err))


def simple_regret(policy: DeploymentPolicy, spec: EnvironmentSpec, density: int = 1) -> float:
    nodes, weights = quadrature_nodes(policy.grid, density)
    return float(np.dot(weights, instantaneous_regret(spec, nodes, policy(nodes))))


def bin_gaps(grid: Grid, spec: EnvironmentSpec) -> np.ndarray:
    """CATE evaluated at each bin centre."""
    return spec.cate(bin_center(grid, np.arange(grid.total)))

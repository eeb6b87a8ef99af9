"""Equal-width partitions of the unit cube.

Bins are indexed row-major with axis 0 varying fastest, so a point with
per-axis bin coordinates ``(b_0, ..., b_{d-1})`` lands in bin
``b_0 + b_1 * k + b_2 * k**2 + ...`` where ``k`` is the per-axis count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Relative slack used when flooring n ** p, so exact powers such as
# (10 ** 6) ** (1 / 3) do not round down to 99.
_FLOOR_RTOL = 1e-9


def floor_power(n: float, exponent: float) -> int:
    """Return floor(n ** exponent), robust to float error at exact integers."""
    value = float(n) ** exponent
    nearest = round(value)
    if abs(value - nearest) <= _FLOOR_RTOL * max(1.0, abs(value)):
        return int(nearest)
    return int(math.floor(value))


@dataclass(frozen=True)
class Grid:
    d: int
    per_dim: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.per_dim < 1:
            raise ValueError(f"per_dim must be positive, got {self.per_dim}")

    @property
    def total(self) -> int:
        return self.per_dim**self.d

    @property
    def width(self) -> float:
        return 1.0 / self.per_dim

    def index(self, x) -> np.ndarray | int:
        return bin_index(self, x)

    def center(self, j: int) -> np.ndarray:
        return bin_center(self, j)


def make_grid(n: int, d: int, beta: float, alpha_exponent: float = 0.0) -> Grid:
    """Grid with floor(n ** ((1 - alpha) / (2 beta + d))) bins per axis.

    ``alpha_exponent=0`` gives the fine grid used by the elimination phase;
    the exploration parameter gives the coarse estimation grid.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    per_dim = floor_power(n, (1.0 - alpha_exponent) / (2.0 * beta + d))
    return Grid(d=d, per_dim=max(per_dim, 1))


def _axis_bins(grid: Grid, x: np.ndarray) -> np.ndarray:
    b = np.floor(x * grid.per_dim).astype(np.int64)
    # closed upper edge: x == 1.0 belongs to the last bin
    return np.clip(b, 0, grid.per_dim - 1)


def bin_index(grid: Grid, x):
    """Row-major bin index of ``x``.

    Accepts a single point of shape ``(d,)`` (returns an int) or a batch of
    shape ``(k, d)`` (returns an int64 array of length ``k``). For ``d == 1``
    a flat array of scalars is treated as a batch.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and (grid.d > 1 or arr.size == 1))
    pts = arr.reshape(-1, grid.d)
    b = _axis_bins(grid, pts)
    strides = grid.per_dim ** np.arange(grid.d, dtype=np.int64)
    idx = b @ strides
    if single:
        return int(idx[0])
    return idx


def bin_coords(grid: Grid, j) -> np.ndarray:
    """Per-axis bin coordinates of index (or indices) ``j``."""
    j = np.asarray(j, dtype=np.int64)
    out = np.empty(j.shape + (grid.d,), dtype=np.int64)
    rem = j.copy()
    for axis in range(grid.d):
        out[..., axis] = rem % grid.per_dim
        rem = rem // grid.per_dim
    return out


def bin_center(grid: Grid, j) -> np.ndarray:
    if np.any(np.asarray(j) < 0) or np.any(np.asarray(j) >= grid.total):
        raise IndexError(f"bin index {j} out of range for {grid.total} bins")
    return (bin_coords(grid, j) + 0.5) / grid.per_dim


def bin_probability(grid: Grid, spec, j: int) -> float:
    """P(X in bin j) under the environment's covariate distribution."""
    if not 0 <= j < grid.total:
        raise IndexError(f"bin index {j} out of range for {grid.total} bins")
    if spec.covariate_dist != "uniform":
        raise NotImplementedError(f"covariate distribution {spec.covariate_dist!r}")
    return 1.0 / grid.total

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conse_lab.binning import Grid, bin_center
from conse_lab.env import Constant, EnvironmentSpec, build_constant_gap_instance, build_smooth_sine_instance
from conse_lab.metrics import (CateEstimate, DeploymentPolicy, accumulate_regret, bin_gaps,
                               instantaneous_regret, mise, quadrature_nodes, simple_regret)


class Linear:
    def __call__(self, X):
        return X[:, 0]


class Table:
    """Piecewise-constant function on a grid."""

    def __init__(self, grid, values):
        self.grid, self.values = grid, values

    def __call__(self, X):
        from conse_lab.binning import bin_index

        return self.values[bin_index(self.grid, X)]


def estimate(grid, values):
    values = np.asarray(values, dtype=float)
    return CateEstimate(grid, values, np.zeros(grid.total, bool))


def test_accumulate_regret_examples():
    spec = EnvironmentSpec(1, 1.0, 1.0, Constant(0.2), Constant(0.5))
    assert accumulate_regret(spec, [0.3], 1) == 0.0
    assert accumulate_regret(spec, [0.3], 0) == pytest.approx(0.3)
    flat = EnvironmentSpec(1, 1.0, 1.0, Constant(0.5), Constant(0.5))
    assert np.all(instantaneous_regret(flat, np.random.default_rng(0).random((50, 1)), 1) == 0)


def test_mise_constant_cases():
    spec = build_constant_gap_instance(1, 1.0, 1.0, gap=0.2)
    g = Grid(1, 5)
    assert mise(estimate(g, [0.2] * 5), spec) == pytest.approx(0.0, abs=1e-15)
    assert mise(estimate(g, [0.0] * 5), spec) == pytest.approx(0.04)


@pytest.mark.parametrize("per_dim", [1, 2, 7, 32])
def test_mise_of_linear_cate_is_one_third(per_dim):
    spec = EnvironmentSpec(1, 1.0, 1.0, Constant(0.0), Linear())
    err = mise(estimate(Grid(1, per_dim), np.zeros(per_dim)), spec)
    # midpoint rule for x^2 with N nodes undershoots by exactly 1 / (12 N^2)
    N = 256 * per_dim
    assert err == pytest.approx(1 / 3 - 1 / (12 * N**2), abs=1e-13)
    if per_dim >= 2:
        assert err == pytest.approx(1 / 3, abs=1e-6)


def test_mise_2d_halton_constant():
    spec = build_constant_gap_instance(2, 1.0, 1.0, gap=0.3)
    g = Grid(2, 4)
    assert mise(estimate(g, np.zeros(16)), spec) == pytest.approx(0.09)


def test_mise_permutation_invariance():
    rng = np.random.default_rng(3)
    g = Grid(1, 8)
    truth = rng.uniform(-0.5, 0.5, 8)
    est = rng.uniform(-0.5, 0.5, 8)
    perm = rng.permutation(8)
    s1 = EnvironmentSpec(1, 1.0, 1.0, Constant(0.0), Table(g, truth))
    s2 = EnvironmentSpec(1, 1.0, 1.0, Constant(0.0), Table(g, truth[perm]))
    a = mise(estimate(g, est), s1)
    b = mise(estimate(g, est[perm]), s2)
    assert a == pytest.approx(b, rel=1e-12)
    assert a == pytest.approx(np.mean((truth - est) ** 2), rel=1e-12)


@pytest.mark.parametrize("d, per_dim", [(1, 10), (1, 40), (2, 6)])
def test_quadrature_convergence_on_sine(d, per_dim):
    spec = build_smooth_sine_instance(d, 1.0, 1.0)
    g = Grid(d, per_dim)
    est = estimate(g, spec.cate(bin_center(g, np.arange(g.total))))
    base = mise(est, spec)
    fine = mise(est, spec, density=2)
    assert abs(base - fine) < 1e-4 * (1 + base)


def test_quadrature_weights_sum_to_one():
    for g in (Grid(1, 3), Grid(3, 2)):
        _, w = quadrature_nodes(g)
        assert w.sum() == pytest.approx(1.0)


def test_simple_regret_examples():
    spec = build_constant_gap_instance(1, 1.0, 1.0, gap=0.4)
    g = Grid(1, 4)
    assert simple_regret(DeploymentPolicy(g, np.zeros(4, np.int8)), spec) == pytest.approx(0.4)
    assert simple_regret(DeploymentPolicy(g, np.ones(4, np.int8)), spec) == 0.0
    flat = build_constant_gap_instance(1, 1.0, 1.0, gap=0.0)
    assert simple_regret(DeploymentPolicy(g, np.zeros(4, np.int8)), flat) == 0.0


@pytest.mark.parametrize("per_dim", [4, 10, 33])
def test_simple_regret_of_binwise_argmax_within_holder_bound(per_dim):
    spec = build_smooth_sine_instance(1, 1.0, 1.0)
    g = Grid(1, per_dim)
    arms = (bin_gaps(g, spec) > 0).astype(np.int8)
    assert simple_regret(DeploymentPolicy(g, arms), spec) <= spec.L * (1 / per_dim) ** spec.beta


def test_degenerate_count():
    g = Grid(1, 3)
    est = CateEstimate(g, np.zeros(3), np.array([True, False, True]))
    assert est.degenerate_count == 2
    with pytest.raises(ValueError):
        CateEstimate(g, np.zeros(2), np.zeros(2, bool))


@settings(max_examples=40, deadline=None)
@given(vals=st.lists(st.floats(-1, 1), min_size=5, max_size=5), arms=st.lists(st.integers(0, 1), min_size=5, max_size=5))
def test_metrics_nonnegative(vals, arms):
    spec = build_smooth_sine_instance(1, 1.0, 1.0)
    g = Grid(1, 5)
    assert mise(estimate(g, vals), spec) >= 0
    assert simple_regret(DeploymentPolicy(g, np.array(arms, np.int8)), spec) >= 0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conse_lab.dp import (PrivacyParams, audit_table, lap_plus_interval_mass, lap_plus_pmf,
                          lap_plus_sample, laplace_sample, mechanism_ratio_audit)
from conse_lab.dp import laplace_from_uniform, lap_plus_from_uniform


def brute_lap_plus_pmf(m, eps, k, tail=20_000):
    """Normalize exp(-eps/2 |k|) numerically over the support."""
    F = math.floor(m)
    weights = [math.exp(-eps / 2 * abs(j)) for j in range(-F, tail)]
    return math.exp(-eps / 2 * abs(k)) / math.fsum(weights)


def test_privacy_params_validation():
    PrivacyParams(1.0, 1e-4)
    with pytest.raises(ValueError):
        PrivacyParams(0.0)
    with pytest.raises(ValueError):
        PrivacyParams(1.0, 1.0)


def test_lap_plus_pmf_reference_value():
    expected = (math.exp(0.5) - 1) / (math.exp(0.5) + 1 - math.exp(-1.0))
    assert lap_plus_pmf(2, 1.0, 0) == pytest.approx(expected, rel=1e-12)
    assert lap_plus_pmf(2, 1.0, 0) == pytest.approx(0.2844, abs=1e-4)


@pytest.mark.parametrize("m", [1, 2, 2.7, 10, 57])
@pytest.mark.parametrize("eps", [0.1, 1.0, 10.0])
def test_lap_plus_pmf_matches_numeric_normalization(m, eps):
    for k in (-math.floor(m), -1, 0, 1, 5):
        if k >= -math.floor(m):
            assert lap_plus_pmf(m, eps, k) == pytest.approx(brute_lap_plus_pmf(m, eps, k), rel=1e-9)


def test_lap_plus_geometric_tail():
    for k in range(6):
        assert lap_plus_pmf(10, 1.0, k) / lap_plus_pmf(10, 1.0, k + 1) == pytest.approx(math.exp(0.5))


def test_lap_plus_pmf_rejects_below_support():
    with pytest.raises(ValueError):
        lap_plus_pmf(3, 1.0, -4)


def test_lap_plus_sampler_matches_pmf():
    rng = np.random.default_rng(5)
    draws = np.array([lap_plus_sample(2, 1.0, rng) for _ in range(200_000)])
    assert draws.min() >= 0
    for k in (-2, -1, 0, 1, 3):
        p = lap_plus_pmf(2, 1.0, k)
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(np.mean(draws == 2 + k) - p) < 3.5 * se


def test_lap_plus_inverse_cdf_against_cumulative_pmf():
    # the sampler at u must return the smallest value whose CDF reaches u
    m, eps = 7, 0.8
    F = math.floor(m)
    values = np.arange(0, F + 200)
    cdf = np.cumsum([lap_plus_pmf(m, eps, v - F) for v in values])
    for u in np.linspace(0.0005, 0.9995, 400):
        expected = values[np.searchsorted(cdf, u - 1e-13)]
        assert lap_plus_from_uniform(float(F), eps, u) == expected


def test_lap_plus_sample_deterministic():
    a = [lap_plus_sample(50, 0.5, np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1


def test_lap_plus_interval_mass_high_probability():
    n, eps = 10_000, 1.0
    from conse_lab.policies import epoch_batch_len

    R = epoch_batch_len(1, n)
    radius = math.ceil(2 / eps * math.log(n))
    mass = lap_plus_interval_mass(R, eps, radius)
    F = math.floor(R)
    direct = math.fsum(lap_plus_pmf(R, eps, k) for k in range(-radius, radius + 1) if k >= -F)
    assert mass == pytest.approx(direct, rel=1e-12)
    assert mass >= 1 - 2 / n


def test_laplace_moments():
    rng = np.random.default_rng(11)
    u = rng.random(1_000_000)
    z = np.array([laplace_from_uniform(1.0, x) for x in u[:200_000]])
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 2.0) < 0.05
    assert abs(np.median(z)) < 0.02


def test_laplace_sample_rejects_bad_scale(rng):
    with pytest.raises(ValueError):
        laplace_sample(0.0, rng)
    assert isinstance(laplace_sample(1.0, rng), float)


def test_laplace_zero_uniform_is_finite():
    assert math.isfinite(laplace_from_uniform(1.0, 0.0))


def test_laplace_mean_audit_values():
    assert mechanism_ratio_audit("laplace-mean", R=100, epsilon=1.0) == pytest.approx(0.5, abs=1e-9)
    for c in (0.5, 2.0, 7.0):
        assert mechanism_ratio_audit("laplace-mean", R=100, epsilon=c) == pytest.approx(c / 2, abs=1e-9)


@pytest.mark.parametrize("m", [1, 2, 10, 300])
@pytest.mark.parametrize("eps", [0.1, 1.0, 10.0])
def test_lap_plus_shift_audit_bounded(m, eps):
    ratio = mechanism_ratio_audit("lap-plus-shift", m=m, epsilon=eps)
    assert 0 < ratio <= eps * (1 + 1e-9)


def test_unknown_mechanism():
    with pytest.raises(ValueError):
        mechanism_ratio_audit("gaussian")


def test_audit_table_all_pass():
    rows = audit_table()
    assert rows and all(r["passed"] for r in rows)


@settings(max_examples=80, deadline=None)
@given(u=st.floats(0.0, 1.0, exclude_max=True), m=st.integers(1, 5000), eps=st.floats(0.05, 20.0))
def test_lap_plus_support_is_nonnegative_integer(u, m, eps):
    v = lap_plus_from_uniform(float(m), eps, u)
    assert v >= 0 and v == int(v)


@settings(max_examples=80, deadline=None)
@given(u=st.floats(1e-9, 1 - 1e-9), b=st.floats(1e-4, 1e3))
def test_laplace_antisymmetric(u, b):
    # complements of u stay exactly representable in this range
    assert laplace_from_uniform(b, u) == pytest.approx(-laplace_from_uniform(b, 1 - u), rel=1e-6, abs=1e-9 * b)

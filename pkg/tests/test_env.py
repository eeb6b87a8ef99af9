import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conse_lab.env import (Constant, EnvironmentSpec, HardInstanceParams, InvalidParameter,
                           build_appendix_hard_instance, build_constant_gap_instance, build_instance,
                           build_mixed_gap_instance, build_smooth_sine_instance, bump_kernel,
                           codebook_candidates, constant_gap_value, default_hard_params, draw_reward,
                           holder_check, kernel_holder_seminorm, potential_outcomes, sample_covariate,
                           vg_codebook)


class Linear:
    def __call__(self, X):
        return X[:, 0]


class Fixed:
    def __init__(self, p):
        self.p = p

    def __call__(self, X):
        return np.full(len(X), self.p)


def test_sample_covariate_support_and_determinism():
    spec = build_constant_gap_instance(2, 1.0, 1.0)
    x = sample_covariate(spec, np.random.default_rng(4))
    assert x.shape == (2,) and np.all((0 <= x) & (x <= 1))
    y = sample_covariate(spec, np.random.default_rng(4))
    assert np.array_equal(x, y)


def test_sample_covariate_mean():
    spec = build_constant_gap_instance(1, 1.0, 1.0)
    X = sample_covariate(spec, np.random.default_rng(0), 100_000)
    assert abs(X.mean() - 0.5) < 0.01


def test_draw_reward_degenerate_and_mean(rng):
    spec = EnvironmentSpec(1, 1.0, 1.0, Fixed(0.3), Fixed(1.0))
    assert all(draw_reward(spec, [0.5], 1, rng) == 1.0 for _ in range(100))
    draws = [draw_reward(spec, [0.5], 0, rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 0.3) < 0.01


def test_truncated_gaussian_in_unit_interval(rng):
    spec = EnvironmentSpec(1, 1.0, 1.0, Fixed(0.02), Fixed(0.97), noise="truncated_gaussian", sigma=0.5)
    X = rng.random((10_000, 1))
    y0, y1 = potential_outcomes(spec, X, rng)
    assert y0.min() >= 0 and y1.max() <= 1
    assert y0.min() == 0.0 and y1.max() == 1.0


def test_reward_means_within_four_standard_errors():
    spec = build_mixed_gap_instance(1, 1.0, 1.0, 1000)
    rng = np.random.default_rng(8)
    for x in np.linspace(0.05, 0.95, 10):
        X = np.full((100_000, 1), x)
        y0, y1 = potential_outcomes(spec, X, rng)
        for arm, y in ((0, y0), (1, y1)):
            mu = spec.mean(arm, [x])[0]
            se = math.sqrt(max(mu * (1 - mu), 1e-12) / len(y))
            assert abs(y.mean() - mu) <= 4 * se + 1e-12


def test_mixed_gap_small_gap_value():
    spec = build_mixed_gap_instance(1, 1.0, 1.0, 10**6)
    assert spec.params["delta"] == pytest.approx(0.01)
    assert spec.cate([0.25])[0] == pytest.approx(0.01)
    assert spec.cate([0.9])[0] == pytest.approx(-constant_gap_value(1.0, 1.0))


@pytest.mark.parametrize("d, beta, L, n", [(1, 1.0, 1.0, 10**6), (1, 0.5, 1.0, 10**4), (2, 1.0, 3.0, 10**5)])
def test_mixed_gap_cate_signs(d, beta, L, n):
    spec = build_mixed_gap_instance(d, beta, L, n)
    half = spec.params["band_width"] / 2
    grid = np.linspace(0, 1, 401)
    pts = np.zeros((len(grid), d)) + 0.3
    pts[:, 0] = grid
    cate = spec.cate(pts)
    assert np.all(cate[grid < 0.5 - half] > 0)
    assert np.all(cate[grid > 0.5 + half] < 0)


def test_mixed_gap_rejects_large_small_gap():
    with pytest.raises(InvalidParameter) as err:
        build_mixed_gap_instance(1, 1.0, 1.0, 100, small_gap_override=0.5)
    assert err.value.param == "small_gap_override"


@pytest.mark.parametrize("name", ["mixed_gap", "constant_gap", "smooth_sine", "appendix_hard"])
@pytest.mark.parametrize("d, beta, L", [(1, 1.0, 1.0), (1, 0.5, 1.0), (2, 1.0, 0.5), (2, 0.5, 3.0)])
def test_every_builder_passes_holder_check(name, d, beta, L):
    try:
        spec = build_instance(name, d, beta, L, 4096)
    except InvalidParameter as exc:
        # a builder may refuse a parameter set, but must name the parameter
        assert exc.param
        return
    assert holder_check(spec, 10_000, np.random.default_rng(1)).passed
    X = np.random.default_rng(2).random((10_000, d))
    for arm in (0, 1):
        m = spec.mean(arm, X)
        assert np.all((m >= 0) & (m <= 1))


def test_holder_check_examples():
    const = EnvironmentSpec(1, 1.0, 1.0, Constant(0.5), Constant(0.5))
    res = holder_check(const, 1000)
    assert res.passed and res.worst_ratio == 0.0
    lin = EnvironmentSpec(1, 1.0, 1.0, Constant(0.5), Linear())
    res = holder_check(lin, 1000)
    assert res.passed and res.worst_ratio == pytest.approx(1.0, abs=1e-9)
    assert not holder_check(EnvironmentSpec(1, 1.0, 0.5, Constant(0.5), Linear()), 1000).passed


def test_spec_validation_names_parameter():
    with pytest.raises(InvalidParameter) as err:
        EnvironmentSpec(1, 1.5, 1.0, Constant(0.5), Constant(0.5))
    assert err.value.param == "beta"
    with pytest.raises(InvalidParameter) as err:
        build_instance("nope", 1, 1.0, 1.0, 100)
    assert err.value.param == "instance"


def test_smooth_sine_amplitude_capped():
    spec = build_smooth_sine_instance(1, 1.0, 1.0)
    assert spec.params["amplitude"] <= 0.2
    assert holder_check(spec, 10_000).passed
    with pytest.raises(InvalidParameter):
        build_smooth_sine_instance(1, 1.0, 1.0, amplitude=0.2)
    assert build_smooth_sine_instance(1, 1.0, 3.0).params["amplitude"] == pytest.approx(0.2)


def test_bump_kernel_basic_values():
    assert bump_kernel(np.zeros(2)) == 1.0
    assert bump_kernel(np.array([1 / 12, 0.0])) == 0.0
    assert bump_kernel(np.array([0.0, -0.2])) == 0.0


def test_bump_kernel_properties_random(rng):
    u = rng.uniform(-0.2, 0.2, size=(10_000, 2))
    k = bump_kernel(u)
    assert np.all((k >= 0) & (k <= 1))
    assert np.array_equal(k, bump_kernel(-u))
    assert np.all(k[np.any(np.abs(u) >= 1 / 12, axis=1)] == 0)


def test_kernel_seminorm_is_stable():
    assert kernel_holder_seminorm(1, 1.0) == pytest.approx(26.0, rel=0.05)


def test_codebook_all_words_when_distance_one():
    book = vg_codebook(4, 1, np.random.default_rng(0))
    assert len(book) == 16
    assert len({tuple(w) for w in book.words}) == 16


def test_codebook_minimum_target():
    assert len(vg_codebook(8, 1, np.random.default_rng(0), target=2)) >= 2


def brute_greedy(cands, dist):
    kept = []
    for w in cands:
        if all(np.count_nonzero(w != k) >= dist for k in kept):
            kept.append(w)
    return kept


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_codebook_matches_greedy_oracle(seed):
    book = vg_codebook(8, 2, np.random.default_rng(seed))
    cands = codebook_candidates(8, np.random.default_rng(seed))
    oracle = brute_greedy(cands, 2)
    assert len(book) == len(oracle)
    assert np.array_equal(book.words, np.array(oracle))


@pytest.mark.parametrize("N", [8, 16, 24, 40])
def test_codebook_pairwise_distance_and_size(N):
    dist = math.ceil(N / 8)
    book = vg_codebook(N, dist, np.random.default_rng(N))
    assert len(book) >= 2 ** math.ceil(N / 8)
    W = book.words.astype(int)
    D = (W[:, None, :] != W[None, :, :]).sum(-1)
    np.fill_diagonal(D, N)
    assert D.min() >= dist


def test_codebook_rejects_bad_distance(rng):
    with pytest.raises(ValueError):
        vg_codebook(4, 5, rng)


def _hard(d=1, m=4, omega=None, v=None, L=1.0):
    N = m**d
    omega = omega or tuple([1] * N)
    v = v or tuple([0] * N)
    return build_appendix_hard_instance(HardInstanceParams(m=m, omega=omega, v=v), d, 1.0, L)


def test_hard_instance_estimation_region_values():
    spec = _hard()
    base = max(0.25, 0.5 - 1 / 3)
    m = 4
    q_prime = 2 / 3 + (np.arange(m) + 0.5) / (3 * m)
    assert np.allclose(spec.mean(1, q_prime[:, None]), base)
    X = np.random.default_rng(0).uniform(2 / 3, 1, size=(10_000, 1))
    assert np.all(spec.mean(1, X) < 0.5)


def test_hard_instance_bump_peak():
    spec = _hard(v=(1, 0, 1, 0))
    c_L, h = spec.params["c_L"], spec.params["h"]
    q = (np.arange(4) + 0.5) / 12
    assert np.allclose(spec.mean(1, q[:, None]), 0.5 + c_L * h)
    assert np.allclose(spec.mean(0, q[:, None]), 0.5)


def test_hard_instance_negative_signs_and_2d():
    spec = _hard(d=2, m=3, omega=tuple([-1, 1] * 4 + [-1]))
    assert holder_check(spec, 10_000, np.random.default_rng(3)).passed
    assert spec.mean(1, [[1 / 18, 1 / 18]])[0] < 0.5


def test_hard_instance_rejects_wrong_lengths():
    with pytest.raises(InvalidParameter) as err:
        build_appendix_hard_instance(HardInstanceParams(m=3, omega=(1, 1), v=(0, 0, 0)), 1, 1.0, 1.0)
    assert err.value.param == "omega"
    with pytest.raises(InvalidParameter):
        HardInstanceParams(m=2, omega=(1, 2), v=(0, 0))


def test_default_hard_params_shape():
    p = default_hard_params(4096, 1, 1.0, np.random.default_rng(0))
    assert p.m == 16 and len(p.omega) == 16 and len(p.v) == 16


@settings(max_examples=25, deadline=None)
@given(g=st.floats(-1.0, 1.0), L=st.floats(0.1, 5.0), beta=st.floats(0.1, 1.0))
def test_constant_gap_cate(g, L, beta):
    spec = build_constant_gap_instance(1, beta, L, gap=g)
    x = np.linspace(0, 1, 11)[:, None]
    assert np.allclose(spec.cate(x), g)
    assert holder_check(spec, 200).passed

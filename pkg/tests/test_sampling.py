import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stairslab.sampling import (LatentCoupling, RngHandle, sample_latent_pair,
                                sample_latent_pairs, sample_unit_sphere)

SQRT_2_OVER_PI = np.sqrt(2 / np.pi)


def test_same_seed_bitwise_identical():
    a = RngHandle(99).derive("x").normal(1000)
    b = RngHandle(99).derive("x").normal(1000)
    assert np.array_equal(a, b)


def test_derived_streams_differ_and_do_not_depend_on_draw_order():
    root = RngHandle(7)
    child_first = root.derive("a").normal(100)
    # consuming the parent stream must not shift the children
    root2 = RngHandle(7)
    root2.normal(12345)
    assert np.array_equal(child_first, root2.derive("a").normal(100))
    assert not np.array_equal(child_first, RngHandle(7).derive("b").normal(100))
    assert not np.array_equal(child_first, RngHandle(8).derive("a").normal(100))


def test_string_and_int_keys():
    assert np.array_equal(RngHandle(1).derive("run", 3).normal(8),
                          RngHandle(1).derive("run", 3).normal(8))
    with pytest.raises(ValueError):
        RngHandle(1).derive(-2)
    with pytest.raises(TypeError):
        RngHandle(1).derive(3.5)


def test_unit_sphere_norm_and_errors(rng):
    w = sample_unit_sphere(17, rng)
    assert abs(np.linalg.norm(w) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        sample_unit_sphere(0, rng)


def test_unit_sphere_1d_is_sign(rng):
    vals = {float(sample_unit_sphere(1, rng)[0]) for _ in range(20)}
    assert vals <= {1.0, -1.0} and len(vals) == 2


def test_unit_sphere_mean_first_coordinate(rng):
    # coordinate mean over 1e5 draws at d=128; each coordinate has variance 1/d
    d, n = 128, 100_000
    z = rng.gen.standard_normal((n, d))
    w = z / np.linalg.norm(z, axis=1, keepdims=True)
    assert abs(w[:, 0].mean()) < 0.005


def test_sign_matched_correlation(rng):
    lam, nu = sample_latent_pairs(LatentCoupling.sign_matched(), 1_000_000, rng)
    assert abs((lam * nu).mean() - SQRT_2_OVER_PI) < 0.003


def test_independent_correlation(rng):
    lam, nu = sample_latent_pairs(LatentCoupling.independent(), 1_000_000, rng)
    assert abs((lam * nu).mean()) < 0.003


def test_partial_sign_half_correlation(rng):
    lam, nu = sample_latent_pairs(LatentCoupling.partial_sign(0.5), 1_000_000, rng)
    assert abs((lam * nu).mean() - 0.5 * SQRT_2_OVER_PI) < 0.003


def test_partial_sign_endpoints_match_named_modes():
    assert LatentCoupling.partial_sign(1.0) == LatentCoupling.sign_matched()
    assert LatentCoupling.partial_sign(0.0) == LatentCoupling.independent()


def test_invalid_partial_sign():
    with pytest.raises(ValueError):
        LatentCoupling.partial_sign(1.5)
    with pytest.raises(ValueError):
        LatentCoupling.partial_sign(-0.1)


@pytest.mark.parametrize("coupling", [LatentCoupling.independent(),
                                      LatentCoupling.sign_matched(),
                                      LatentCoupling.partial_sign(0.3)])
def test_nu_marginal_is_rademacher(coupling, rng):
    _, nu = sample_latent_pairs(coupling, 1_000_000, rng)
    assert set(np.unique(nu)) <= {-1.0, 1.0}
    counts = [(nu == -1).sum(), (nu == 1).sum()]
    assert stats.chisquare(counts).pvalue > 0.001


def test_lambda_moment_check(rng):
    lam, _ = sample_latent_pairs(LatentCoupling.sign_matched(), 1_000_000, rng)
    assert abs(lam.mean()) < 0.005
    assert abs((lam ** 2).mean() - 1) < 0.01
    assert abs((lam ** 4).mean() - 3) < 0.05


def test_sample_latent_pair_scalar(rng):
    lam, nu = sample_latent_pair(LatentCoupling.sign_matched(), rng)
    assert isinstance(lam, float) and nu in (-1.0, 1.0)
    assert nu == (1.0 if lam >= 0 else -1.0)


@settings(max_examples=25, deadline=None)
@given(q=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(0, 2**32 - 1))
def test_nu_always_pm_one(q, seed):
    lam, nu = sample_latent_pairs(LatentCoupling.partial_sign(q), 64, RngHandle(seed))
    assert np.all(np.abs(nu) == 1.0)
    assert np.isfinite(lam).all()

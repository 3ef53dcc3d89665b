import math

import numpy as np
import numpy.polynomial.hermite_e as hermite_e
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stairslab.errors import AssumptionViolationError, NumericalAccuracyError
from stairslab.hermite import (CustomActivation, HermiteSeries, PolynomialActivation,
                               Relu, SmoothedRelu, activation_coeff, activation_coeffs,
                               build_series, convert_coefficients,
                               effective_search_coeffs, excess_population_loss,
                               hermite_eval, hermite_table, identity_activation,
                               likelihood_coeff, likelihood_coeff_exact,
                               likelihood_series_mc, mcm_assumption_holds,
                               population_gradient, population_loss,
                               population_loss_se, require_mcm_assumption)
from stairslab.mcm import McmParams
from stairslab.sampling import LatentCoupling, RngHandle

SQRT_2_OVER_PI = np.sqrt(2 / np.pi)


# --- basis ------------------------------------------------------------------

def test_probabilists_values():
    assert hermite_eval(2, 1.0, "probabilists") == pytest.approx(0.0, abs=1e-14)
    assert hermite_eval(3, 2.0, "probabilists") == pytest.approx(2.0)
    assert hermite_eval(4, 1.0, "probabilists") == pytest.approx(-2.0)
    assert hermite_eval(4, -1.0, "probabilists") == pytest.approx(-2.0)


def test_degree_cap():
    with pytest.raises(ValueError):
        hermite_eval(31, 0.5)


def test_orthonormality_by_quadrature():
    # Gauss-Hermite with 200 nodes is exact for polynomials of degree <= 399
    nodes, weights = hermite_e.hermegauss(200)
    weights = weights / np.sqrt(2 * np.pi)
    table = hermite_table(12, nodes)
    gram = (table * weights) @ table.T
    assert np.abs(gram - np.eye(13)).max() < 1e-10


@settings(max_examples=50, deadline=None)
@given(k=st.integers(0, 12), z=st.floats(-8, 8))
def test_convention_conversion_pointwise(k, z):
    a = hermite_eval(k, z, "normalized") * math.sqrt(math.factorial(k))
    b = hermite_eval(k, z, "probabilists")
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_coefficient_conversion_roundtrip():
    c = np.array([0.3, -1.2, 0.05, 2.0, -0.7])
    back = convert_coefficients(
        convert_coefficients(c, "normalized", "probabilists"), "probabilists", "normalized")
    assert np.allclose(back, c, atol=1e-12, rtol=1e-12)


# --- activation coefficients ---------------------------------------------------

def test_relu_coefficients_closed_forms():
    relu = Relu()
    assert activation_coeff(relu, 0) == pytest.approx(1 / np.sqrt(2 * np.pi), abs=1e-9)
    assert activation_coeff(relu, 1) == pytest.approx(0.5, abs=1e-9)
    assert activation_coeff(relu, 2) == pytest.approx(1 / np.sqrt(4 * np.pi), abs=1e-9)
    assert activation_coeff(relu, 3) == pytest.approx(0.0, abs=1e-9)
    assert activation_coeff(relu, 4) == pytest.approx(
        -1 / (np.sqrt(24) * np.sqrt(2 * np.pi)), abs=1e-9)


def test_relu_high_degree_matches_kink_identity():
    # E[relu(z) He_k(z)] = He_{k-2}(0) / sqrt(2 pi) for k >= 2
    from stairslab.hermite import he_at_zero
    for k in (6, 8, 10, 12):
        expected = he_at_zero(k - 2) / np.sqrt(2 * np.pi) / math.sqrt(math.factorial(k))
        assert activation_coeff(Relu(), k) == pytest.approx(expected, abs=1e-9)


def test_polynomial_coefficients_exact():
    # sigma(z) = z^2 = He_2 + 1: normalized c0 = 1, c2 = sqrt(2)
    sq = PolynomialActivation((0.0, 0.0, 1.0))
    assert activation_coeff(sq, 0) == pytest.approx(1.0, abs=1e-10)
    assert activation_coeff(sq, 2) == pytest.approx(np.sqrt(2), abs=1e-10)
    assert activation_coeff(sq, 4) == pytest.approx(0.0, abs=1e-10)


def test_smoothed_relu_satisfies_assumption():
    ok, c2, c4 = mcm_assumption_holds(SmoothedRelu(0.2))
    assert ok and c2 > 0 and c4 < 0


def test_identity_fails_assumption():
    with pytest.raises(AssumptionViolationError):
        require_mcm_assumption(identity_activation())


def test_pure_h4_fails_assumption():
    h4 = PolynomialActivation((3 / math.sqrt(24), 0.0, -6 / math.sqrt(24), 0.0,
                               1 / math.sqrt(24)), name="h4")
    ok, c2, c4 = mcm_assumption_holds(h4)
    assert not ok and abs(c2) < 1e-8 and c4 == pytest.approx(1.0, abs=1e-8)


def test_quadrature_nonconvergence_raises():
    # jump away from the origin: neither quadrature path can resolve it
    wild = CustomActivation(lambda z: (np.asarray(z) > 0.7366).astype(float), name="wild")
    with pytest.raises(NumericalAccuracyError):
        activation_coeff(wild, 2)


# --- likelihood coefficients ----------------------------------------------------

SIGN_PARAMS = McmParams(d=64, beta_u=5.0, beta_v=10.0,
                        coupling=LatentCoupling.sign_matched())
IND_PARAMS = McmParams(d=64, beta_u=5.0, beta_v=10.0)


def test_exact_low_order_values():
    assert likelihood_coeff_exact(SIGN_PARAMS, 0, 0) == 1.0
    assert likelihood_coeff_exact(SIGN_PARAMS, 1, 0) == 0.0
    assert likelihood_coeff_exact(SIGN_PARAMS, 2, 0) == pytest.approx(5 / np.sqrt(2))
    assert likelihood_coeff_exact(SIGN_PARAMS, 0, 2) == pytest.approx(0.0, abs=1e-14)
    assert likelihood_coeff_exact(SIGN_PARAMS, 1, 1) == pytest.approx(
        np.sqrt(50 / 11) * SQRT_2_OVER_PI)
    assert likelihood_coeff_exact(SIGN_PARAMS, 0, 4) == pytest.approx(
        -2 * (10 / 11) ** 2 / np.sqrt(24))
    assert likelihood_coeff_exact(SIGN_PARAMS, 4, 0) == pytest.approx(75 / np.sqrt(24))
    # beyond closed forms for coupled latents
    assert likelihood_coeff_exact(SIGN_PARAMS, 3, 3) is None
    # independent latents factorise at every order
    v33 = likelihood_coeff_exact(IND_PARAMS, 3, 3)
    assert v33 == 0.0


def test_exact_vs_monte_carlo(rng):
    for (i, j) in [(2, 0), (0, 4), (1, 1), (3, 1), (1, 3), (2, 2)]:
        est, se = likelihood_coeff(SIGN_PARAMS, i, j, 400_000, rng.derive(f"{i}{j}"))
        exact = likelihood_coeff_exact(SIGN_PARAMS, i, j)
        assert abs(est - exact) < 4 * se + 1e-4, (i, j, est, exact, se)


def test_factorisation_property_independent(rng):
    mc, se = likelihood_series_mc(IND_PARAMS, 6, 500_000, rng)
    for i in range(1, 6):
        for j in range(1, 7 - i):
            prod = likelihood_coeff_exact(IND_PARAMS, i, 0) * \
                likelihood_coeff_exact(IND_PARAMS, 0, j)
            assert abs(mc[i, j] - prod) < 3 * se[i, j] + 1e-3, (i, j)


def test_odd_pure_v_coefficients_vanish(rng):
    mc, se = likelihood_series_mc(IND_PARAMS, 5, 400_000, rng)
    for j in (1, 3, 5):
        assert abs(mc[0, j]) < 3 * se[0, j] + 1e-3


def test_accuracy_warning(rng):
    with pytest.warns(UserWarning):
        likelihood_coeff(SIGN_PARAMS, 4, 4, 20_000, rng, tol=1e-6)


def test_beta_m_rejected():
    with pytest.raises(ValueError):
        likelihood_coeff_exact(McmParams(d=8, beta_m=1.0), 0, 0)


# --- the population-loss series ---------------------------------------------------

def _sign_series(K=8, rng=None):
    return build_series(SIGN_PARAMS, Relu(), truncation=K, rng=rng, n_mc=300_000)


def test_loss_at_origin_is_one():
    series = _sign_series()
    assert population_loss(series, 0.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_domain_error():
    series = _sign_series()
    with pytest.raises(ValueError):
        population_loss(series, 0.55, 0.0)
    with pytest.raises(ValueError):
        population_gradient(series, 0.0, -0.5)


def test_excess_loss_matches_difference():
    series = _sign_series(rng=RngHandle(5))
    for (au, av) in [(0.1, 0.2), (-0.15, 0.05), (0.3, -0.3)]:
        direct = population_loss(series, au, av) - population_loss(series, 0.0, 0.0)
        assert excess_population_loss(series, au, av) == pytest.approx(direct, abs=1e-12)


def test_gradient_matches_finite_differences():
    series = _sign_series(rng=RngHandle(7))
    h = 1e-5
    grid = np.linspace(-0.3, 0.3, 10)
    for au in grid:
        for av in grid:
            du, dv = population_gradient(series, au, av)
            fu = (population_loss(series, au + h, av) - population_loss(series, au - h, av)) / (2 * h)
            fv = (population_loss(series, au, av + h) - population_loss(series, au, av - h)) / (2 * h)
            assert abs(du - fu) / max(abs(fu), 1e-6) < 1e-6
            assert abs(dv - fv) / max(abs(fv), 1e-6) < 1e-6


def test_gradient_zero_at_origin_hessian_cross_term():
    series = _sign_series()
    du, dv = population_gradient(series, 0.0, 0.0)
    assert du == pytest.approx(0.0, abs=1e-12)
    assert dv == pytest.approx(0.0, abs=1e-12)
    # mixed second derivative equals -c11: the sqrt(2)-weighted pairing
    h = 1e-4
    d2 = (population_loss(series, h, h) - population_loss(series, h, -h)
          - population_loss(series, -h, h) + population_loss(series, -h, -h)) / (4 * h * h)
    c = effective_search_coeffs(series)
    assert d2 == pytest.approx(-c.c11, rel=1e-4)


def test_search_coeffs_values():
    c = effective_search_coeffs(_sign_series())
    assert c.c20 == pytest.approx(0.4986779, abs=2e-6)
    assert c.c11 == pytest.approx(0.3393195, abs=2e-6)
    assert c.c04 == pytest.approx(0.0137377, abs=2e-6)


def test_search_coeffs_independent_no_cross():
    series = build_series(IND_PARAMS, Relu(), truncation=8)
    c = effective_search_coeffs(series)
    assert c.c11 == 0.0 and c.c20 > 0 and c.c04 > 0


def test_search_coeffs_no_covariance_spike():
    series = build_series(McmParams(d=16, beta_v=10.0,
                                    coupling=LatentCoupling.sign_matched()),
                          Relu(), truncation=6)
    c = effective_search_coeffs(series)
    assert c.c20 == 0.0 and c.c11 == 0.0 and c.c04 > 0


def test_search_coeffs_reject_bad_activation():
    series = build_series(SIGN_PARAMS, identity_activation(), truncation=6)
    with pytest.raises(AssumptionViolationError):
        effective_search_coeffs(series)


def test_partial_sign_cross_term_scales_linearly():
    full = effective_search_coeffs(build_series(SIGN_PARAMS, Relu(), truncation=4))
    part = effective_search_coeffs(build_series(
        McmParams(d=64, beta_u=5.0, beta_v=10.0,
                  coupling=LatentCoupling.partial_sign(0.25)), Relu(), truncation=4))
    assert part.c11 == pytest.approx(0.25 * full.c11, rel=1e-10)
    assert part.c20 == pytest.approx(full.c20, rel=1e-12)


def test_information_exponent_slopes():
    # independent: loss excess ~ a_v^4, gradient ~ a_v^3; coupled: ~ (a, a)^2
    ind = build_series(IND_PARAMS, Relu(), truncation=8)
    alphas = np.geomspace(1e-3, 1e-2, 12)
    losses = np.array([abs(excess_population_loss(ind, 0.0, a)) for a in alphas])
    slope = np.polyfit(np.log(alphas), np.log(losses), 1)[0]
    assert abs(slope - 4.0) < 0.1
    grads = np.array([abs(population_gradient(ind, 0.0, a)[1]) for a in alphas])
    gslope = np.polyfit(np.log(alphas), np.log(grads), 1)[0]
    assert abs(gslope - 3.0) < 0.1
    sgn = _sign_series()
    both = np.array([abs(excess_population_loss(sgn, a, a)) for a in alphas])
    bslope = np.polyfit(np.log(alphas), np.log(both), 1)[0]
    assert abs(bslope - 2.0) < 0.1


def test_series_se_tracks_mc_entries(rng):
    series = _sign_series(rng=rng)
    assert population_loss_se(series, 0.0, 0.0) == 0.0
    assert population_loss_se(series, 0.2, 0.2) > 0.0
    closed_only = _sign_series()
    assert not closed_only.complete
    assert population_loss_se(closed_only, 0.2, 0.2) == 0.0


def test_series_requires_normalised_likelihood():
    K = 4
    c_l = np.zeros((K + 1, K + 1))
    c_l[0, 0] = 0.9
    with pytest.raises(ValueError):
        HermiteSeries(np.zeros(K + 1), c_l, np.zeros((K + 1, K + 1)), K)

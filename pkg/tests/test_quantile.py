import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracle_values import (
    ALPHAS,
    JEFFREYS_QUANTILE_RESIDUAL,
    JEFFREYS_QUANTILE_RESIDUAL_NORMAL_MEAN_EQ_VAR_THETA1,
)
from predmatch.errors import DomainError, NotAGradientField
from predmatch.family import PriorField, builtin_family, power_prior
from predmatch.fisher import jeffreys_gradient
from predmatch.quantile import (
    avg_prediction_error,
    freq_quantile,
    gradient_field_test,
    h_field,
    local_prior_gradient,
    mu_alpha_second_derivative,
    mu_alpha_second_derivative_exact,
    mu_tail,
    mu_vector,
    path_integrals,
    quantile_residual,
    quantile_slice,
    quantile_terms,
    reconstruct_log_prior,
    reconstructed_prior,
    residual_sweep,
    upmp_gradient,
)

LS = ("location-scale-normal", "location-scale-t(5)", "location-scale-logistic")
ALPHA = np.array(ALPHAS)


@given(st.floats(-3, 3), st.floats(0.2, 5), st.floats(0.01, 0.99))
@settings(max_examples=30)
def test_freq_quantile_matches_scipy(mu, sigma, alpha):
    q = freq_quantile(builtin_family("location-scale-t(5)"), (mu, sigma), alpha)
    assert q == pytest.approx(stats.t(5, loc=mu, scale=sigma).isf(alpha), rel=1e-9, abs=1e-9)


def test_freq_quantile_rejects_bad_alpha():
    with pytest.raises(DomainError):
        freq_quantile(builtin_family("location-scale-normal"), (0, 1), 1.0)


def test_mu_is_minus_theta_derivative_of_cdf():
    fam = builtin_family("location-scale-logistic")
    th = np.array([0.3, 1.2])
    sl = quantile_slice(fam, th, 0.2)
    q = freq_quantile(fam, th, 0.2)
    h = 1e-6
    fd = [-(fam.cdf(q, th + e) - fam.cdf(q, th - e)) / (2 * h) for e in np.eye(2) * h]
    assert np.allclose(sl.mu, fd, atol=1e-8)
    assert np.allclose(mu_vector(fam, th, [0.2])[0], sl.mu)


@pytest.mark.parametrize("name", LS)
@pytest.mark.parametrize("theta", [(0.0, 1.0), (1.0, 2.0), (-0.5, 0.5)])
def test_jeffreys_residual_against_frozen_oracle(name, theta):
    fam = builtin_family(name)
    eps = quantile_residual(fam, fam.prior("jeffreys"), theta, ALPHA)
    assert np.allclose(eps, JEFFREYS_QUANTILE_RESIDUAL[name], atol=1e-7)


def test_jeffreys_residual_normal_mean_eq_var():
    fam = builtin_family("normal-mean-eq-var")
    eps = quantile_residual(fam, fam.prior("jeffreys"), (1.0,), ALPHA)
    assert np.allclose(eps, JEFFREYS_QUANTILE_RESIDUAL_NORMAL_MEAN_EQ_VAR_THETA1, atol=1e-7)


@pytest.mark.parametrize("name", LS + ("location-scale-gumbel",))
@given(st.floats(-3, 3), st.floats(0.2, 4), st.floats(0.02, 0.98))
@settings(max_examples=10)
def test_right_haar_is_exactly_matching(name, mu, sigma, alpha):
    fam = builtin_family(name)
    assert abs(quantile_residual(fam, fam.prior("right-haar"), (mu, sigma), alpha)) < 1e-5


def test_scalar_and_array_alpha():
    fam = builtin_family("location-scale-normal")
    pr = fam.prior("jeffreys")
    a = quantile_residual(fam, pr, (0, 1), 0.25)
    b = quantile_residual(fam, pr, (0, 1), [0.25])
    assert isinstance(a, float) and b.shape == (1,) and a == b[0]


def test_terms_error_estimate_small():
    t = quantile_terms(builtin_family("location-scale-normal"), (0.0, 1.0), ALPHA)
    assert np.max(t.div_err) < 1e-6


@pytest.mark.parametrize("name", LS + ("location-scale-gumbel",))
@given(st.floats(-3, 3), st.floats(0.2, 5))
@settings(max_examples=10)
def test_h_field_and_upmp_for_location_scale(name, mu, sigma):
    fam = builtin_family(name)
    assert np.allclose(h_field(fam, (mu, sigma)), [0.0, 1.0 / sigma], atol=1e-7 / sigma)
    assert np.allclose(upmp_gradient(fam, (mu, sigma)), [0.0, -1.0 / sigma], atol=1e-6 / sigma)


@pytest.mark.parametrize("name,grid", [("normal-location", (-2.0, 0.0, 3.0)),
                                       ("normal-mean-eq-var", (0.3, 1.0, 5.0))])
def test_one_parameter_h_vanishes(name, grid):
    fam = builtin_family(name)
    for t in grid:
        assert np.all(h_field(fam, [t]) == 0.0)
        assert np.allclose(upmp_gradient(fam, [t]), jeffreys_gradient(fam, [t]), atol=1e-12)


def test_local_prior_gradient():
    fam = builtin_family("location-scale-normal")
    g = local_prior_gradient(fam, (0.0, 2.0), (0.0, 1.0))
    assert np.allclose(g, [0.0, -2.0 / 2.0 + 1.0], atol=1e-7)


def test_curl_detects_non_gradient_field():
    rot = gradient_field_test(lambda t: np.array([-t[1], t[0]]), [(0.0, 1.0), (1.0, 2.0)])
    assert not rot.is_gradient and rot.max_curl == pytest.approx(2.0, rel=1e-8)
    grad = gradient_field_test(lambda t: np.array([math.cos(t[0]) * t[1] ** 2, 2 * math.sin(t[0]) * t[1]]),
                               [(0.0, 1.0), (1.0, 2.0)])
    assert grad.is_gradient
    assert gradient_field_test(lambda t: np.array([t[0]]), [(1.0,)]).max_curl == 0.0


def test_path_reconstruction():
    field = lambda t: np.array([math.cos(t[0]) * t[1] ** 2, 2 * math.sin(t[0]) * t[1]])
    val = reconstruct_log_prior(field, (0.0, 1.0), (1.2, -0.7))
    assert val == pytest.approx(math.sin(1.2) * 0.49, abs=1e-12)
    with pytest.raises(NotAGradientField):
        reconstruct_log_prior(lambda t: np.array([-t[1], t[0]]), (0.0, 1.0), (1.0, 2.0))
    assert path_integrals(lambda t: np.array([-t[1], t[0]]), (0.0, 1.0), (1.0, 2.0)).path_difference > 1


def test_reconstructed_upmp_is_right_haar():
    fam = builtin_family("location-scale-normal")
    prior = reconstructed_prior(lambda t: upmp_gradient(fam, t), (0.0, 1.0))
    pts = np.array([[0.5, 2.0], [-1.0, 0.5], [2.0, 3.0]])
    assert np.allclose(prior(pts), -np.log(pts[:, 1]), atol=1e-6)
    assert abs(quantile_residual(fam, prior, (1.0, 2.0), 0.3)) < 1e-4


def test_mu_second_derivative_routes_agree():
    fam = builtin_family("location-scale-logistic")
    a = np.array([0.1, 0.4, 0.8])
    fd = mu_alpha_second_derivative(fam, (0.2, 1.5), a)
    ex = mu_alpha_second_derivative_exact(fam, (0.2, 1.5), a)
    assert np.allclose(fd, ex, rtol=1e-4, atol=1e-6)


def test_avg_prediction_error_normal():
    # integral of d^2 mu_r/d alpha^2 times the Jeffreys residual: (0, 1) for the standard member
    fam = builtin_family("location-scale-normal")
    pr = fam.prior("jeffreys")
    ape = [avg_prediction_error(fam, pr, (0.0, 1.0), r, exact_second_derivative=True) for r in range(2)]
    assert np.allclose(ape, [0.0, 1.0], atol=5e-3)
    rh = fam.prior("right-haar")
    assert abs(avg_prediction_error(fam, rh, (0.0, 1.0), 1)) < 1e-4
    with pytest.raises(IndexError):
        avg_prediction_error(fam, pr, (0.0, 1.0), 2)


def test_residual_sweep_shares_terms():
    fam = builtin_family("location-scale-normal")
    priors = [fam.prior("jeffreys"), power_prior("theta2^-3", 2, [0, -3])]
    thetas = [(0.0, 1.0), (1.0, 2.0)]
    reps = residual_sweep(fam, priors, thetas, ALPHA, workers=2)
    for pr, rep in zip(priors, reps):
        assert rep.epsilon.shape == (2, 5)
        for i, th in enumerate(thetas):
            assert np.array_equal(rep.epsilon[i], quantile_residual(fam, pr, th, ALPHA))


def test_quantile_matching_needs_univariate():
    with pytest.raises(ValueError):
        quantile_residual(builtin_family("bvn-cholesky"), builtin_family("bvn-cholesky").prior("jeffreys"),
                          (1, 1, 0), 0.5)


@given(st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=10)
def test_residual_is_affine_in_prior_gradient(a, b):
    fam = builtin_family("location-scale-t(5)")
    t = quantile_terms(fam, (0.3, 1.1), ALPHA)
    e0 = t.residual([0.0, 0.0])
    e1 = t.residual([a, b])
    assert np.allclose(e1 - e0, t.u @ np.array([a, b]), atol=1e-14)
    pr = PriorField("lin", lambda th: a * th[..., 0] + b * th[..., 1], lambda th: np.array([a, b]))
    assert np.allclose(quantile_residual(fam, pr, (0.3, 1.1), ALPHA), e1, atol=1e-14)


def test_jeffreys_gradient_is_a_gradient_field():
    for name, grid in (("location-scale-t(5)", [(0.0, 1.0), (1.0, 2.0)]),
                       ("bvn-cholesky", [(1.0, 2.0, 0.3), (0.5, 1.5, -0.4)])):
        fam = builtin_family(name)
        rep = gradient_field_test(lambda t: jeffreys_gradient(fam, t), grid)
        assert rep.is_gradient, (name, rep.max_curl)


@pytest.mark.parametrize("name", LS + ("location-scale-gumbel", "normal-mean-eq-var"))
def test_mu_alpha_derivative_is_score_at_quantile(name):
    fam = builtin_family(name)
    th = (1.3,) if fam.param_dim == 1 else (0.4, 1.6)
    a = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    h = 1e-4
    fd = (mu_vector(fam, th, a + h) - mu_vector(fam, th, a - h)) / (2 * h)
    score = fam.score(freq_quantile(fam, th, a), np.array(th))
    assert np.allclose(fd, score, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("name", LS + ("location-scale-gumbel",))
def test_mu_equals_minus_cdf_gradient_on_sweep(name):
    fam = builtin_family(name)
    for th in [(0.0, 1.0), (1.0, 2.0), (-0.5, 0.5)]:
        th = np.array(th)
        for a in (0.05, 0.3, 0.5, 0.7, 0.95):
            q = freq_quantile(fam, th, a)
            assert np.allclose(mu_tail(fam, th, q), -fam.cdf_theta_gradient(q, th), atol=1e-6)


@given(st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=15)
def test_upmp_is_unique(a, b):
    # any constant shift of the uniformly matching gradient leaves a nonzero residual
    if max(abs(a), abs(b)) < 1e-3:
        return
    fam = builtin_family("location-scale-normal")
    t = quantile_terms(fam, (1.0, 2.0), np.arange(1, 20) * 0.05)
    g = upmp_gradient(fam, (1.0, 2.0))
    assert np.max(np.abs(t.residual(g))) < 1e-6
    assert np.max(np.abs(t.residual(g + np.array([a, b])))) > 1e-5


def test_gumbel_jeffreys_regression_anchor():
    from predmatch.numerics import DEFAULT_CONFIG
    from regression_anchors import CONFIG_HASH, GUMBEL_JEFFREYS as ref

    assert DEFAULT_CONFIG.config_hash() == CONFIG_HASH
    fam = builtin_family("location-scale-gumbel")
    eps = quantile_residual(fam, fam.prior("jeffreys"), (0.0, 1.0), np.array(ref["alphas"]))
    assert np.allclose(eps, ref["epsilon"], rtol=0, atol=10 * ref["err_est"])
    # right Haar still matches exactly for an asymmetric base
    assert np.max(np.abs(quantile_residual(fam, fam.prior("right-haar"), (0.0, 1.0), np.array(ref["alphas"])))) < 1e-6

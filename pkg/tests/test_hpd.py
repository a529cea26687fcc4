import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from oracle_values import ALPHAS, HPD_THRESHOLD_STANDARD, XI_NORMAL_MEAN_EQ_VAR_THETA2
from predmatch.errors import LinearlyDependentXi
from predmatch.family import builtin_family, bvn_upmp_prior, list_families
from predmatch.fisher import jeffreys_gradient
from predmatch.hpd import (
    RayFrame,
    TabulatedRegion,
    _sv_ratio,
    b_matrix,
    hpd_residual,
    hpd_slice,
    hpd_solution,
    hpd_terms,
    hpd_threshold,
    hpd_upmp_gradient,
    region_mass_tensor,
    separability_diagnosis,
    xi_alpha_derivative,
    xi_alpha_derivative_boundary,
    xi_vector,
)
from predmatch.numerics import DEFAULT_CONFIG

ALPHA = np.array(ALPHAS)
A9 = np.round(np.arange(1, 10) * 0.1, 1)


@pytest.mark.parametrize("name", sorted(HPD_THRESHOLD_STANDARD))
@pytest.mark.parametrize("theta", [(0.0, 1.0), (2.0, 0.5)])
def test_threshold_against_frozen_oracle(name, theta):
    m = hpd_threshold(builtin_family(name), theta, ALPHA)
    # the threshold scales as 1 / sigma
    assert np.allclose(m * theta[1], HPD_THRESHOLD_STANDARD[name], rtol=1e-9)


@pytest.mark.parametrize("name", sorted(HPD_THRESHOLD_STANDARD))
def test_location_xi_vanishes(name):
    xi = xi_vector(builtin_family(name), (0.4, 1.3), ALPHA)
    assert np.max(np.abs(xi[:, 0])) < 1e-14


def test_xi_normal_mean_eq_var_against_frozen_oracle():
    xi = xi_vector(builtin_family("normal-mean-eq-var"), (2.0,), ALPHA)
    assert np.allclose(xi[:, 0], XI_NORMAL_MEAN_EQ_VAR_THETA2, atol=1e-10)


def _bvn_region_reference(th, alpha):
    # {f >= m} is the ellipse with squared Mahalanobis radius -2 log(1 - alpha),
    # so m = |P|^(1/2) (1 - alpha) / (2 pi) with |P|^(1/2) = theta1 theta2
    t1, t2, t3 = th
    return t1 * t2 * (1 - alpha) / (2 * math.pi)


@given(st.floats(0.3, 2.5), st.floats(0.3, 2.5), st.floats(-1.2, 1.2))
@settings(max_examples=8)
def test_bvn_threshold_and_xi(t1, t2, t3):
    fam = builtin_family("bvn-cholesky")
    sol, xi = hpd_solution(fam, (t1, t2, t3), A9)
    assert np.allclose(sol.m, _bvn_region_reference((t1, t2, t3), A9), rtol=1e-7)
    # xi_1 = R / theta1, xi_2 = R / theta2, xi_3 = 0 with R = -(1 - alpha) log(1 - alpha)
    R = -(1 - A9) * np.log(1 - A9)
    assert np.allclose(xi[:, 0] * t1, R, atol=1e-7)
    assert np.allclose(xi[:, 1] * t2, R, atol=1e-7)
    assert np.max(np.abs(xi[:, 2])) < 1e-8


def test_bvn_tensor_grid_cross_check():
    fam = builtin_family("bvn-cholesky")
    th = (1.0, 2.0, 0.3)
    m = hpd_threshold(fam, th, 0.6)
    assert region_mass_tensor(fam, th, m) == pytest.approx(0.6, abs=2e-3)


def test_hpd_slice_mass_error_small():
    s = hpd_slice(builtin_family("mvlocation-spherical-2d"), (0.5, -1.0), 0.3)
    assert s.region_mass_err < 1e-8
    assert s.m == pytest.approx((1 - 0.3) / (2 * math.pi), rel=1e-9)


@pytest.mark.parametrize("name,theta", [("bvn-cholesky", (1.0, 2.0, 0.3)), ("normal-mean-eq-var", (1.5,)),
                                        ("location-scale-t(5)", (0.0, 2.0))])
def test_xi_alpha_derivative_two_routes(name, theta):
    fam = builtin_family(name)
    a = np.array([0.1, 0.35, 0.6, 0.9])
    fd = xi_alpha_derivative(fam, theta, a)
    bd = xi_alpha_derivative_boundary(fam, theta, a)
    assert np.allclose(fd, bd, atol=1e-5)


@pytest.mark.parametrize("name,theta", [("bvn-cholesky", (1.0, 2.0, 0.3)),
                                        ("mvlocation-spherical-2d", (0.5, -1.0)),
                                        ("location-scale-normal", (1.0, 2.0)),
                                        ("location-scale-gumbel", (1.0, 2.0))])
def test_b_singular_when_xi_dependent(name, theta):
    fam = builtin_family(name)
    B = b_matrix(fam, theta)
    assert B.singular
    with pytest.raises(LinearlyDependentXi) as info:
        hpd_upmp_gradient(fam, theta)
    assert info.value.ratio == B.ratio


def test_b11_normal_mean_eq_var_independent_quadrature():
    # xi = -c phi(c) / theta with c = Phi^-1((1 + alpha) / 2); d c / d alpha = 1 / (2 phi(c))
    th = 1.3
    def dxi(a):
        c = stats.norm.ppf((1 + a) / 2)
        return -(1 - c * c) / (2 * th)
    ref, _ = integrate.quad(lambda a: dxi(a) ** 2, 0, 1)
    B = b_matrix(builtin_family("normal-mean-eq-var"), (th,))
    assert B.b[0, 0] == pytest.approx(ref, rel=1e-4)
    assert not B.singular


@pytest.mark.parametrize("th", [0.5, 1.0, 2.0])
def test_hpd_upmp_normal_mean_eq_var(th):
    fam = builtin_family("normal-mean-eq-var")
    g = hpd_upmp_gradient(fam, (th,))
    assert g[0] == pytest.approx(-1.0 / (2 * th * th + th), rel=1e-4)
    # differs from Jeffreys
    assert abs(g[0] - jeffreys_gradient(fam, (th,))[0]) > 0.1 / th


def test_hpd_upmp_is_hpd_matching_normal_mean_eq_var():
    # xi separates as Q(theta) R(alpha), so the prior (2 theta + 1) / theta matches at every level
    fam = builtin_family("normal-mean-eq-var")
    t = hpd_terms(fam, (1.0,), A9)
    assert np.max(np.abs(t.residual(hpd_upmp_gradient(fam, (1.0,))))) < 1e-6
    assert np.max(np.abs(t.residual(jeffreys_gradient(fam, (1.0,))))) > 1e-2


@pytest.fixture(scope="module")
def bvn_terms():
    return hpd_terms(builtin_family("bvn-cholesky"), (1.0, 2.0, 0.3), A9)


@given(st.floats(-2, 2), st.floats(-1, 1))
@settings(max_examples=25)
def test_bvn_matching_family_property(bvn_terms, a, b):
    g = bvn_upmp_prior(a, b).gradient(bvn_terms.theta)
    assert np.max(np.abs(bvn_terms.residual(g))) < 1e-4


def test_bvn_control_not_matching(bvn_terms):
    g = np.array([-3.0 / bvn_terms.theta[0], 0.0, 0.0])
    assert np.max(np.abs(bvn_terms.residual(g))) > 1e-2


def test_right_haar_hpd_matching_location_scale():
    fam = builtin_family("location-scale-normal")
    eps = hpd_residual(fam, fam.prior("right-haar"), (1.0, 2.0), A9)
    assert np.max(np.abs(eps)) < 1e-6
    jef = hpd_residual(fam, fam.prior("jeffreys"), (1.0, 2.0), A9)
    assert np.max(np.abs(jef)) > 1e-2


def test_spherical_location_every_prior_matches():
    fam = builtin_family("mvlocation-spherical-2d")
    for name in ("uniform", "jeffreys", "right-haar"):
        assert np.max(np.abs(hpd_residual(fam, fam.prior(name), (1.0, -0.5), A9))) < 1e-10


@pytest.mark.parametrize("name,thetas,form", [
    ("bvn-cholesky", [(1.0, 1.0, 0.0), (1.0, 2.0, 0.3), (0.5, 1.5, -0.4)], "common-profile"),
    ("location-scale-normal", [(0.0, 1.0), (1.0, 2.0)], "common-profile"),
    ("mvlocation-spherical-2d", [(0.0, 0.0), (1.0, -0.5)], "common-profile"),
    ("normal-mean-eq-var", [(0.5,), (1.0,), (2.0,)], "common-profile"),
])
def test_separability_forms(name, thetas, form):
    rep = separability_diagnosis(builtin_family(name), thetas)
    assert rep.form == form
    assert rep.n_theta == len(thetas)


def test_separability_rejects_theta_dependent_profile():
    # a field whose alpha profile changes with theta is not of the single-profile form
    rep = separability_diagnosis(builtin_family("bvn-cholesky"), [(1.0, 2.0, 0.3)])
    assert rep.form == "common-profile"
    X = np.stack([np.outer([1.0], A9), np.outer([1.0], A9**2)])
    assert _sv_ratio(X.reshape(2, -1)) > 1e-3


def test_dependence_verdict_agrees_with_b():
    # invariant: b singular exactly when the xi components are linearly dependent
    for name in list_families():
        fam = builtin_family(name)
        th = {3: (1.0, 2.0, 0.3), 2: (0.5, 1.5), 1: (1.2,)}[fam.param_dim]
        if fam.param_dim == 1:
            continue
        rep = separability_diagnosis(fam, [th])
        assert rep.dependent == b_matrix(fam, th).singular, name


def test_tabulated_region_matches_family_solver():
    fam = builtin_family("bvn-cholesky")
    th = np.array([1.0, 2.0, 0.3])
    frame = RayFrame.for_family(fam, th, DEFAULT_CONFIG)
    reg = TabulatedRegion(lambda x: fam.log_density(x, th), frame)
    for a in (0.2, 0.5, 0.9):
        assert math.exp(reg.solve(a)) == pytest.approx(hpd_threshold(fam, th, a), rel=1e-6)


def test_bvn_control_residual_closed_form(bvn_terms):
    # theta1^-3 adds -1/theta1 to the Jeffreys gradient, so epsilon = -g^11 xi_1 / theta1 = -R / 2
    eps = bvn_terms.residual(np.array([-3.0 / bvn_terms.theta[0], 0.0, 0.0]))
    assert np.allclose(eps, 0.5 * (1 - A9) * np.log1p(-A9), atol=1e-8)


def test_b_matrix_is_symmetric_psd():
    for name, th in (("bvn-cholesky", (1.0, 2.0, 0.3)), ("location-scale-t(5)", (0.0, 1.0))):
        B = b_matrix(builtin_family(name), th)
        assert np.array_equal(B.b, B.b.T)
        assert B.eigenvalues[0] >= -1e-10

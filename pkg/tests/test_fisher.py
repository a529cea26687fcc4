import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle_values import FISHER_AT_0_1
from predmatch.errors import NonRegularModel
from predmatch.family import builtin_family, list_families, univariate_builtins
from predmatch.fisher import fisher_info, fisher_via_alpha, jeffreys_gradient, numeric_jeffreys_prior


@pytest.mark.parametrize("name", sorted(FISHER_AT_0_1))
def test_fisher_against_frozen_oracle(name):
    g = fisher_info(builtin_family(name), (0.0, 1.0)).g
    assert np.allclose(np.diag(g), FISHER_AT_0_1[name], rtol=1e-7)
    assert abs(g[0, 1]) < 1e-12


@pytest.mark.parametrize("name", sorted(FISHER_AT_0_1))
@given(st.floats(-5, 5), st.floats(0.1, 10))
@settings(max_examples=20)
def test_fisher_scale_equivariance(name, mu, sigma):
    g = fisher_info(builtin_family(name), (mu, sigma)).g
    assert np.allclose(g * sigma**2, np.diag(FISHER_AT_0_1[name]), rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("name", list_families())
def test_fisher_against_family_closed_form(name):
    fam = builtin_family(name)
    th = {3: (0.5, 1.5, -0.4), 2: (0.4, 1.7), 1: (0.8,)}[fam.param_dim]
    info = fisher_info(fam, th)
    assert np.allclose(info.g, fam.oracles["fisher"](np.array(th)), rtol=1e-6, atol=1e-10)
    assert np.allclose(info.g_inv @ info.g, np.eye(fam.param_dim), atol=1e-10)
    assert info.log_det == pytest.approx(np.log(np.linalg.det(info.g)))


def test_bvn_fisher_independent():
    # E[score score^T] by Monte Carlo with a large sample, independent of quadrature
    fam = builtin_family("bvn-cholesky")
    th = np.array([1.0, 2.0, 0.3])
    x = fam.sample(th, np.random.default_rng(1), 400_000)
    s = fam.score(x, th)
    mc = s.T @ s / len(x)
    assert np.allclose(fisher_info(fam, th).g, mc, rtol=0.02, atol=0.02)


@pytest.mark.parametrize("name", univariate_builtins())
def test_fisher_two_routes(name):
    fam = builtin_family(name)
    th = (0.7,) if fam.param_dim == 1 else (0.3, 1.4)
    a = fisher_info(fam, th).g
    b = fisher_via_alpha(fam, th).g
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-3


@pytest.mark.parametrize("name", list_families())
def test_jeffreys_gradient_matches_named_prior(name):
    fam = builtin_family(name)
    th = {3: (0.5, 1.5, -0.4), 2: (0.4, 1.7), 1: (0.8,)}[fam.param_dim]
    g = jeffreys_gradient(fam, th)
    assert np.allclose(g, fam.prior("jeffreys").gradient(np.array(th)), atol=1e-6)
    assert np.allclose(g, numeric_jeffreys_prior(fam).gradient(np.array(th)), atol=1e-5)


def test_degenerate_model_is_non_regular():
    base = builtin_family("normal-location")

    def score(x, theta):
        s = base.score(x, theta[..., :1])
        return np.concatenate([s, s], axis=-1)

    fam = dataclasses.replace(base, name="duplicated", param_dim=2, param_names=("a", "b"), score=score,
                              log_density=lambda x, th: base.log_density(x, th[..., :1] + th[..., 1:]),
                              in_domain=lambda th: True, param_transforms=())
    with pytest.raises(NonRegularModel):
        fisher_info(fam, (0.0, 0.0))


@pytest.mark.parametrize("name", univariate_builtins())
def test_alpha_route_nonsingular(name):
    # mu_t never factorises into a common alpha profile, so the alpha route stays nonsingular
    fam = builtin_family(name)
    th = (0.7,) if fam.param_dim == 1 else (0.3, 1.4)
    assert fisher_via_alpha(fam, th).min_eigenvalue > 0

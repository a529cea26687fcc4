import math

import numpy as np
import pytest
from scipy import stats

from predmatch.coverage import (
    GridSpec,
    PosteriorGrid,
    coverage_mc,
    coverage_mc_hpd,
    posterior_grid,
    predictive_hpd_region,
    predictive_hpd_threshold,
    predictive_quantile,
    replicate_rng,
    student_t_predictive_quantile,
    summarize,
)
from predmatch.errors import GridMisplaced
from predmatch.family import builtin_family, exp_linear_prior, uniform_prior
from predmatch.hpd import hpd_threshold
from predmatch.quantile import freq_quantile

SEED = 2024


@pytest.fixture(scope="module")
def normal_sample():
    return builtin_family("location-scale-normal").sample((0.5, 2.0), np.random.default_rng(3), 8)


def test_posterior_normal_location_conjugate():
    fam = builtin_family("normal-location")
    x = np.array([0.3, -1.1, 2.4, 0.9, 0.2])
    pg = posterior_grid(fam, x, uniform_prior(1))
    # flat prior: posterior N(mean, 1/n)
    assert pg.mean[0] == pytest.approx(x.mean(), abs=1e-9)
    var = pg.weights @ (pg.thetas[:, 0] - x.mean()) ** 2
    assert var == pytest.approx(1 / len(x), rel=1e-6)
    assert pg.weights.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [0.05, 0.3, 0.5, 0.8])
def test_predictive_quantile_normal_location(alpha):
    fam = builtin_family("normal-location")
    x = np.array([0.3, -1.1, 2.4, 0.9, 0.2])
    pg = posterior_grid(fam, x, uniform_prior(1))
    ref = x.mean() + math.sqrt(1 + 1 / len(x)) * stats.norm.isf(alpha)
    assert predictive_quantile(pg, fam, alpha) == pytest.approx(ref, abs=1e-7)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_predictive_quantile_student_t(normal_sample, alpha):
    fam = builtin_family("location-scale-normal")
    pg = posterior_grid(fam, normal_sample, fam.prior("right-haar"))
    x = normal_sample
    n = len(x)
    ref = stats.t(n - 1, loc=x.mean(), scale=x.std(ddof=1) * math.sqrt(1 + 1 / n)).isf(alpha)
    assert predictive_quantile(pg, fam, alpha) == pytest.approx(ref, abs=1e-6)
    assert student_t_predictive_quantile(x, alpha) == pytest.approx(ref, abs=1e-12)


def test_point_mass_reduces_to_model():
    fam = builtin_family("location-scale-logistic")
    pg = PosteriorGrid.point_mass((0.4, 1.7))
    for a in (0.1, 0.6):
        assert predictive_quantile(pg, fam, a) == pytest.approx(freq_quantile(fam, (0.4, 1.7), a), abs=1e-10)
    bvn = builtin_family("bvn-cholesky")
    pg = PosteriorGrid.point_mass((1.0, 2.0, 0.3))
    assert predictive_hpd_threshold(pg, bvn, 0.5) == pytest.approx(hpd_threshold(bvn, (1.0, 2.0, 0.3), 0.5),
                                                                   rel=1e-6)


def test_symmetric_mixture_median_is_centre():
    fam = builtin_family("normal-location")
    pg = PosteriorGrid.from_nodes([[-1.0], [1.0]], [1.0, 1.0])
    assert abs(predictive_quantile(pg, fam, 0.5)) < 1e-10


def test_predictive_region_mass_check():
    fam = builtin_family("bvn-cholesky")
    x = fam.sample((1.0, 1.0, 0.0), np.random.default_rng(5), 20)
    pg = posterior_grid(fam, x, fam.prior("jeffreys"))
    reg = predictive_hpd_region(pg, fam, 0.7, check=True)
    assert reg.mass_check == pytest.approx(0.7, abs=1e-6)
    assert reg.contains(np.atleast_2d(reg.frame.center))[0]


def test_grid_misplaced_when_prior_dominates():
    fam = builtin_family("normal-location")
    with pytest.raises(GridMisplaced):
        posterior_grid(fam, np.zeros(5), exp_linear_prior("steep", [1e4]), GridSpec(width=1.0, max_retries=0))


def test_replicate_rng_streams():
    a = replicate_rng(1, 0).standard_normal(4)
    assert np.array_equal(a, replicate_rng(1, 0).standard_normal(4))
    assert not np.array_equal(a, replicate_rng(1, 1).standard_normal(4))
    with pytest.raises(ValueError):
        replicate_rng(-1, 0)


def test_coverage_argument_checks():
    fam = builtin_family("location-scale-normal")
    with pytest.raises(ValueError):
        coverage_mc(fam, fam.prior("right-haar"), (0, 1), 5, 0.1, 99, SEED)
    with pytest.raises(ValueError):
        coverage_mc(fam, fam.prior("right-haar"), (0, 1), 0, 0.1, 100, SEED)


def test_coverage_deterministic_and_worker_independent():
    fam = builtin_family("location-scale-normal")
    pr = fam.prior("jeffreys")
    a = coverage_mc(fam, pr, (0.0, 1.0), 5, [0.1, 0.5], 100, SEED, workers=1)
    b = coverage_mc(fam, pr, (0.0, 1.0), 5, [0.1, 0.5], 100, SEED, workers=3)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]
    c = coverage_mc(fam, pr, (0.0, 1.0), 5, [0.1, 0.5], 100, SEED + 1)
    assert a[0].coverage_hat != c[0].coverage_hat
    assert "alpha" in summarize(a)


@pytest.mark.parametrize("name,prior,theta0", [("location-scale-normal", "right-haar", (0.0, 1.0)),
                                               ("normal-location", "uniform", (1.5,))])
def test_exactly_matching_priors_have_nominal_coverage(name, prior, theta0):
    fam = builtin_family(name)
    for r in coverage_mc(fam, fam.prior(prior), theta0, 5, [0.1, 0.5, 0.9], 300, SEED):
        assert r.ok and 0.0 <= r.coverage_hat <= 1.0 and r.se > 0
        assert abs(r.coverage_hat - r.alpha) / r.se <= 3.0
        # Rao-Blackwellised and binary estimators agree within 3 combined standard errors
        assert abs(r.coverage_binary - r.coverage_hat) <= 3 * math.hypot(r.se, r.se_binary)


def test_jeffreys_defect_matches_expansion():
    fam = builtin_family("location-scale-normal")
    for r in coverage_mc(fam, fam.prior("jeffreys"), (0.0, 1.0), 10, [0.1, 0.9], 400, SEED):
        assert r.ok and abs(r.z_score) <= 3.0
        assert r.predicted_defect == pytest.approx(-0.11245508 if r.alpha == 0.1 else 0.11245508, abs=1e-6)


def test_hpd_coverage_spherical_location():
    fam = builtin_family("mvlocation-spherical-2d")
    r = coverage_mc_hpd(fam, uniform_prior(2), (0.5, -1.0), 5, 0.5, 100, SEED)
    assert r.ok and r.kind == "hpd"
    assert abs(r.coverage_hat - 0.5) / r.se <= 3.0
    assert r.predicted_defect == pytest.approx(0.0, abs=1e-8)


@pytest.mark.slow
def test_defect_stable_in_sample_size():
    fam = builtin_family("location-scale-normal")
    pr = fam.prior("jeffreys")
    r10 = coverage_mc(fam, pr, (0.0, 1.0), 10, 0.1, 1000, SEED)
    r20 = coverage_mc(fam, pr, (0.0, 1.0), 20, 0.1, 1000, SEED + 1)
    assert abs(r10.defect_hat - r20.defect_hat) <= 3 * math.hypot(r10.defect_se, r20.defect_se)

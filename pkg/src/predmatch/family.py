"""Parametric families, log-prior fields and the built-in model catalogue.

All family callables broadcast: ``theta`` carries the parameter vector on
its last axis and ``x`` is an array of scalar observations (1-D models) or
has a trailing axis of length 2 (bivariate models).  The leading shapes of
``x`` and ``theta`` broadcast against each other, so a whole posterior grid
can be evaluated against a data set in one call.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import DomainError
from .numerics import (
    DEFAULT_CONFIG,
    EPS,
    NumericsConfig,
    fd_gradient,
    integrate_1d,
    ray_directions,
    standard_rule,
    window_rule,
)

LOG_2PI = math.log(2 * math.pi)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorField:
    """A log prior lambda(theta) = log pi(theta), up to an additive constant.

    ``log_prior`` broadcasts over leading axes of theta; the gradient is only
    ever requested at single points.
    """

    name: str
    log_prior: Callable
    log_prior_gradient: Callable

    def __call__(self, theta):
        return self.log_prior(np.asarray(theta, dtype=float))

    def gradient(self, theta) -> np.ndarray:
        return np.asarray(self.log_prior_gradient(np.asarray(theta, dtype=float)), dtype=float)

    @classmethod
    def from_log_prior(cls, name: str, log_prior: Callable, cfg: NumericsConfig = DEFAULT_CONFIG):
        """Prior whose gradient is taken by central differences."""

        def grad(theta):
            return fd_gradient(lambda t: float(log_prior(t)), theta, cfg)

        return cls(name, log_prior, grad)


def uniform_prior(p: int) -> PriorField:
    return PriorField(
        "uniform",
        lambda th: np.zeros(np.shape(th)[:-1]),
        lambda th: np.zeros(p),
    )


def power_prior(name: str, p: int, exponents) -> PriorField:
    """pi(theta) proportional to prod theta_i ** e_i (positive components only)."""
    e = np.asarray(exponents, dtype=float)
    if e.shape != (p,):
        raise ValueError("one exponent per parameter required")
    used = e != 0

    def logp(th):
        th = np.asarray(th, dtype=float)
        return np.sum(np.where(used, e * np.log(np.where(used, th, 1.0)), 0.0), axis=-1)

    def grad(th):
        th = np.asarray(th, dtype=float)
        return np.where(used, e / np.where(used, th, 1.0), 0.0)

    return PriorField(name, logp, grad)


def exp_linear_prior(name: str, coefs) -> PriorField:
    """pi(theta) proportional to exp(sum a_i theta_i)."""
    a = np.asarray(coefs, dtype=float)
    return PriorField(name, lambda th: np.asarray(th, dtype=float) @ a, lambda th: a.copy())


# ---------------------------------------------------------------------------
# Family container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricFamily:
    """A regular parametric model f(x; theta) with a uniform interface.

    ``window(theta)`` returns a centre and a scale used to place quadrature
    nodes: for 1-D models two scalars, for 2-D models a centre vector and a
    2x2 matrix A such that x = centre + A z standardises the density.
    ``mode(theta)`` must lie inside every highest-density region and the
    density must decrease along rays from it (true for every built-in).
    ``quadratic_form(thetas)``, when present for a 2-D model, returns
    coefficients c (..., 6) with log f = c . (1, x1, x2, x1^2, x1 x2, x2^2);
    posterior mixtures then evaluate as a single matrix product.
    """

    name: str
    param_dim: int
    obs_dim: int
    param_names: tuple
    log_density: Callable
    score: Callable
    sampler: Callable
    window: Callable
    in_domain: Callable
    domain_text: str
    support: tuple = ((-np.inf, np.inf),)
    score_x_derivative: Callable | None = None
    cdf: Callable | None = None
    sf: Callable | None = None
    cdf_theta_gradient: Callable | None = None
    mode: Callable | None = None
    estimate: Callable | None = None
    param_transforms: tuple = ()
    named_priors: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)
    description: str = ""
    quadratic_form: Callable | None = None

    # -- evaluation helpers -------------------------------------------------

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise DomainError(f"{self.name}: expected {self.param_dim} parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)) or not bool(self.in_domain(theta)):
            raise DomainError(f"{self.name}: theta={theta.tolist()} outside domain ({self.domain_text})")
        return theta

    def density(self, x, theta):
        return np.exp(self.log_density(x, theta))

    def dscore_dx(self, x, theta):
        """d l_t / dx, closed form when available, else a central difference in x."""
        if self.obs_dim != 1:
            raise ValueError("d l_t/dx is only defined for univariate observations")
        if self.score_x_derivative is not None:
            return self.score_x_derivative(x, theta)
        x = np.asarray(x, dtype=float)
        h = EPS ** (1 / 3) * (1 + np.abs(x))
        return (self.score(x + h, theta) - self.score(x - h, theta)) / (2 * h)[..., None]

    def survival(self, x, theta):
        if self.sf is not None:
            return self.sf(x, theta)
        if self.cdf is None:
            raise ValueError(f"{self.name} has no distribution function")
        return 1.0 - self.cdf(x, theta)

    def mode_point(self, theta):
        if self.mode is not None:
            return self.mode(theta)
        return self.window(theta)[0]

    def prior(self, name: str) -> PriorField:
        if name == "uniform" and "uniform" not in self.named_priors:
            return uniform_prior(self.param_dim)
        try:
            return self.named_priors[name]
        except KeyError:
            raise KeyError(f"{self.name} has no prior {name!r}; known: {sorted(self.named_priors)}") from None

    def sample(self, theta, rng, size: int):
        return self.sampler(self.check_theta(theta), rng, size)

    def __repr__(self):
        return f"ParametricFamily({self.name!r}, p={self.param_dim}, obs_dim={self.obs_dim})"


def quadratic_features(x) -> np.ndarray:
    """(1, x1, x2, x1^2, x1 x2, x2^2) for points x (..., 2)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([np.ones_like(x1), x1, x2, x1 * x1, x1 * x2, x2 * x2], axis=-1)


def obs_rule(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG):
    """Nodes and weights for integrals over the whole observation space.

    1-D: composite Gauss-Legendre through the algebraic map of the real line,
    placed with the family window.  2-D: polar coordinates about the window
    centre in the standardised frame, radial half-line map times periodic
    trapezoid in angle.
    """
    center, scale = fam.window(theta)
    if fam.obs_dim == 1:
        (lo, hi), = fam.support
        return window_rule(lo, hi, center, scale, cfg)
    A = np.asarray(scale, dtype=float)
    dirs, wphi = ray_directions(2, cfg.n_angles)
    t, v = standard_rule("half", cfg.x_panels, cfg.x_order)
    z = t[None, :, None] * dirs[:, None, :]  # (angles, radial, 2)
    x = np.asarray(center, float) + z @ A.T
    w = wphi[:, None] * (v * t)[None, :] * abs(np.linalg.det(A))
    return x.reshape(-1, 2), w.ravel()


# ---------------------------------------------------------------------------
# Standardised base densities for location-scale constructions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseDensity:
    """A standardised unimodal density f*(z), mode at 0, with its log-derivatives.

    Symmetric bases derive the survival function from the CDF; asymmetric
    ones supply ``survival`` and the cross information E[psi (1 + z psi)].
    """

    name: str
    logpdf: Callable
    psi: Callable  # d/dz log f*
    dpsi: Callable  # d^2/dz^2 log f*
    cdf: Callable
    ppf: Callable
    draw: Callable  # (rng, size)
    info_loc: float  # E[psi^2]
    info_scale: float  # E[(1 + z psi)^2]
    info_cross: float = 0.0  # E[psi (1 + z psi)]
    survival: Callable | None = None
    symmetric: bool = True

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def sf(self, z):
        if self.survival is not None:
            return self.survival(z)
        return self.cdf(-np.asarray(z))


def _normal_base():
    return BaseDensity(
        "normal",
        logpdf=lambda z: -0.5 * z * z - 0.5 * LOG_2PI,
        psi=lambda z: -np.asarray(z, dtype=float),
        dpsi=lambda z: np.full(np.shape(z), -1.0),
        cdf=special.ndtr,
        ppf=special.ndtri,
        draw=lambda rng, size: rng.standard_normal(size),
        info_loc=1.0,
        info_scale=2.0,
    )


def _logistic_base():
    def logpdf(z):
        a = np.abs(z)
        return -a - 2.0 * np.log1p(np.exp(-a))

    def dpsi(z):
        t = np.tanh(0.5 * np.asarray(z, dtype=float))
        return -0.5 * (1.0 - t * t)

    return BaseDensity(
        "logistic",
        logpdf=logpdf,
        psi=lambda z: -np.tanh(0.5 * np.asarray(z, dtype=float)),
        dpsi=dpsi,
        cdf=special.expit,
        ppf=special.logit,
        draw=lambda rng, size: rng.logistic(size=size),
        info_loc=1.0 / 3.0,
        info_scale=(math.pi**2 + 3.0) / 9.0,
    )


def _t_base(nu: float):
    c = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)

    def logpdf(z):
        return c - 0.5 * (nu + 1) * np.log1p(np.asarray(z, dtype=float) ** 2 / nu)

    def psi(z):
        z = np.asarray(z, dtype=float)
        return -(nu + 1) * z / (nu + z * z)

    def dpsi(z):
        z2 = np.asarray(z, dtype=float) ** 2
        return -(nu + 1) * (nu - z2) / (nu + z2) ** 2

    return BaseDensity(
        f"t({nu:g})",
        logpdf=logpdf,
        psi=psi,
        dpsi=dpsi,
        cdf=lambda z: special.stdtr(nu, z),
        ppf=lambda u: special.stdtrit(nu, u),
        draw=lambda rng, size: rng.standard_t(nu, size),
        info_loc=(nu + 1) / (nu + 3),
        info_scale=2 * nu / (nu + 3),
    )


EULER_GAMMA = 0.57721566490153286


def _gumbel_base():
    """Largest-extreme-value density exp(-z - e^-z); mode 0, right skewed.

    z is floored at -6.5 (log f* about -659 there) so that e^-z cannot
    overflow on far-left quadrature nodes; the affected region has
    probability below 1e-280.
    """
    zmin = -6.5

    def ez(z):
        return np.exp(-np.maximum(np.asarray(z, dtype=float), zmin))

    def logpdf(z):
        return -np.maximum(np.asarray(z, dtype=float), zmin) - ez(z)

    return BaseDensity(
        "gumbel",
        logpdf=logpdf,
        psi=lambda z: ez(z) - 1.0,
        dpsi=lambda z: -ez(z),
        cdf=lambda z: np.exp(-ez(z)),
        ppf=lambda u: -np.log(-np.log(np.asarray(u, dtype=float))),
        draw=lambda rng, size: rng.gumbel(size=size),
        info_loc=1.0,
        info_scale=math.pi**2 / 6 + (1 - EULER_GAMMA) ** 2,
        info_cross=EULER_GAMMA - 1.0,
        survival=lambda z: -np.expm1(-ez(z)),
        symmetric=False,
    )


def base_density(name: str) -> BaseDensity:
    name = name.strip()
    if name == "normal":
        return _normal_base()
    if name == "logistic":
        return _logistic_base()
    if name == "gumbel":
        return _gumbel_base()
    m = re.fullmatch(r"t\(\s*([0-9.]+)\s*\)", name)
    if m:
        nu = float(m.group(1))
        if nu <= 0:
            raise ValueError("t degrees of freedom must be positive")
        return _t_base(nu)
    raise ValueError(f"unknown base density {name!r} (normal, logistic, gumbel, t(nu))")


# ---------------------------------------------------------------------------
# Location-scale constructions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocScaleMap:
    """theta -> (location, scale) with Jacobians, for location/scale combinators.

    ``loc`` and ``scale`` are specs: ("param", i), ("const", c), and for the
    scale additionally ("exp", i) and ("sqrt", i).
    """

    p: int
    loc: tuple
    scale: tuple

    def _eval(self, spec, th):
        kind, arg = spec
        shape = th.shape[:-1]
        jac = np.zeros(th.shape)
        if kind == "const":
            return np.full(shape, float(arg)), jac
        v = th[..., arg]
        if kind == "param":
            jac[..., arg] = 1.0
            return v, jac
        if kind == "exp":
            e = np.exp(v)
            jac[..., arg] = e
            return e, jac
        if kind == "sqrt":
            r = np.sqrt(v)
            jac[..., arg] = 0.5 / r
            return r, jac
        raise ValueError(f"unknown combinator {kind!r}")

    def __call__(self, theta):
        th = np.asarray(theta, dtype=float)
        mu, dmu = self._eval(self.loc, th)
        sig, dsig = self._eval(self.scale, th)
        return mu, sig, dmu, dsig

    def in_domain(self, theta):
        th = np.asarray(theta, dtype=float)
        kind, arg = self.scale
        if kind in ("param", "sqrt"):
            return bool(th[arg] > 0)
        return True


def location_scale_family(name: str, base: BaseDensity, pmap: LocScaleMap, param_names, *,
                          estimate=None, transforms=None, priors=None, description="") -> ParametricFamily:
    """Build f(x; theta) = sigma^-1 f*((x - mu) / sigma) with (mu, sigma) = pmap(theta)."""
    p = pmap.p

    def parts(x, theta):
        mu, sig, dmu, dsig = pmap(theta)
        z = (np.asarray(x, dtype=float) - mu) / sig
        return z, sig, dmu, dsig

    def log_density(x, theta):
        z, sig, _, _ = parts(x, theta)
        return base.logpdf(z) - np.log(sig)

    def score(x, theta):
        z, sig, dmu, dsig = parts(x, theta)
        psi = base.psi(z)
        l_mu = -psi / sig
        l_sig = -(1.0 + z * psi) / sig
        return l_mu[..., None] * dmu + l_sig[..., None] * dsig

    def score_x(x, theta):
        z, sig, dmu, dsig = parts(x, theta)
        psi, dpsi = base.psi(z), base.dpsi(z)
        d_mu = -dpsi / sig**2
        d_sig = -(psi + z * dpsi) / sig**2
        return d_mu[..., None] * dmu + d_sig[..., None] * dsig

    def cdf(x, theta):
        z, _, _, _ = parts(x, theta)
        return base.cdf(z)

    def sf(x, theta):
        z, _, _, _ = parts(x, theta)
        return base.sf(z)

    def cdf_grad(x, theta):
        z, sig, dmu, dsig = parts(x, theta)
        fz = base.pdf(z)
        return (-fz / sig)[..., None] * dmu + (-z * fz / sig)[..., None] * dsig

    def sampler(theta, rng, size):
        mu, sig, _, _ = pmap(theta)
        return mu + sig * base.draw(rng, size)

    def window(theta):
        mu, sig, _, _ = pmap(theta)
        return float(mu), float(sig)

    def fisher_oracle(theta):
        _, sig, dmu, dsig = pmap(theta)
        J = np.stack([dmu, dsig])  # 2 x p
        G = np.array([[base.info_loc, base.info_cross], [base.info_cross, base.info_scale]]) / sig**2
        return J.T @ G @ J

    def quantile_oracle(theta, alpha):
        mu, sig, _, _ = pmap(theta)
        return mu + sig * base.ppf(1.0 - np.asarray(alpha, dtype=float))

    def hpd_threshold_oracle(theta, alpha):
        _, sig, _, _ = pmap(theta)
        c = base.ppf(0.5 * (1.0 + np.asarray(alpha, dtype=float)))
        return base.pdf(c) / sig

    def xi_oracle(theta, alpha):
        # HPD interval is mu +/- c sigma; the location part of F_t cancels exactly
        _, sig, dmu, dsig = pmap(theta)
        c = base.ppf(0.5 * (1.0 + np.asarray(alpha, dtype=float)))
        xi_sig = -2.0 * c * base.pdf(c) / sig
        return xi_sig[..., None] * dsig + 0.0 * dmu

    if estimate is None:
        estimate = _robust_loc_scale_estimator(base, pmap)
    if transforms is None:
        transforms = tuple(
            "log" if pmap.scale in (("param", i), ("sqrt", i)) else "identity" for i in range(p)
        )
    all_priors = {"uniform": uniform_prior(p)}
    all_priors.update(priors or {})
    return ParametricFamily(
        name=name,
        param_dim=p,
        obs_dim=1,
        param_names=tuple(param_names),
        log_density=log_density,
        score=score,
        score_x_derivative=score_x,
        cdf=cdf,
        sf=sf,
        cdf_theta_gradient=cdf_grad,
        sampler=sampler,
        window=window,
        in_domain=pmap.in_domain,
        domain_text="scale parameter > 0" if pmap.scale[0] in ("param", "sqrt") else "all real",
        mode=lambda theta: window(theta)[0],
        estimate=estimate,
        param_transforms=transforms,
        named_priors=all_priors,
        oracles={
            "fisher": fisher_oracle,
            "quantile": quantile_oracle,
            **({"hpd_threshold": hpd_threshold_oracle, "xi": xi_oracle} if base.symmetric else {}),
        },
        description=description or f"location-scale model with {base.name} base",
    )


def _robust_loc_scale_estimator(base: BaseDensity, pmap: LocScaleMap):
    base_iqr = float(base.ppf(0.75) - base.ppf(0.25))
    base_median = float(base.ppf(0.5))

    def estimate(data):
        x = np.asarray(data, dtype=float).ravel()
        med = float(np.median(x))
        q75, q25 = np.percentile(x, [75, 25])
        sig = max(float(q75 - q25) / base_iqr, 1e-3 * (1 + abs(med)))
        if len(x) < 8:
            sig = max(sig, float(np.std(x, ddof=1)) if len(x) > 1 else 1.0)
        th = np.zeros(pmap.p)
        lk, li = pmap.loc
        sk, si = pmap.scale
        if sk == "param":
            th[si] = sig
        elif sk == "exp":
            th[si] = math.log(sig)
        elif sk == "sqrt":
            th[si] = sig**2
        if lk == "param":
            th[li] = med - sig * base_median
            if sk == "sqrt" and si == li:
                th[li] = max(float(np.mean(x)), 1e-3)
        return th

    return estimate


# ---------------------------------------------------------------------------
# Bivariate models
# ---------------------------------------------------------------------------


def _bvn_cholesky() -> ParametricFamily:
    """Zero-mean bivariate normal, T^{-1} = [[t1, 0], [t2 t3, t2]], Sigma = T T'."""

    def comps(x, theta):
        x = np.asarray(x, dtype=float)
        th = np.asarray(theta, dtype=float)
        t1, t2, t3 = th[..., 0], th[..., 1], th[..., 2]
        x1, x2 = x[..., 0], x[..., 1]
        w = t3 * x1 + x2
        return t1, t2, t3, x1, w, t1 * x1, t2 * w

    def log_density(x, theta):
        t1, t2, _, _, _, z1, z2 = comps(x, theta)
        return np.log(t1) + np.log(t2) - LOG_2PI - 0.5 * (z1 * z1 + z2 * z2)

    def score(x, theta):
        t1, t2, _, x1, w, z1, z2 = comps(x, theta)
        return np.stack([1.0 / t1 - z1 * x1, 1.0 / t2 - z2 * w, -z2 * t2 * x1], axis=-1)

    def tmat(theta):
        t1, t2, t3 = (float(v) for v in theta)
        return np.array([[1.0 / t1, 0.0], [-t3 / t1, 1.0 / t2]])

    def sampler(theta, rng, size):
        z = rng.standard_normal((size, 2))
        return z @ tmat(theta).T

    def estimate(data):
        x = np.asarray(data, dtype=float)
        S = x.T @ x / len(x)
        L = np.linalg.inv(np.linalg.cholesky(S))
        return np.array([L[0, 0], L[1, 1], L[1, 0] / L[1, 1]])

    def fisher_oracle(theta):
        t1, t2, _ = theta
        return np.diag([2 / t1**2, 2 / t2**2, t2**2 / t1**2])

    def R(alpha):
        a = np.asarray(alpha, dtype=float)
        return -(1 - a) * np.log1p(-a)

    def xi_oracle(theta, alpha):
        t1, t2, _ = theta
        r = R(alpha)
        return np.stack([r / t1, r / t2, 0.0 * r], axis=-1)

    def quadratic_form(theta):
        th = np.asarray(theta, dtype=float)
        t1, t2, t3 = th[..., 0], th[..., 1], th[..., 2]
        z = np.zeros_like(t1)
        return np.stack([np.log(t1) + np.log(t2) - LOG_2PI, z, z,
                         -0.5 * (t1 * t1 + t2 * t2 * t3 * t3), -t2 * t2 * t3, -0.5 * t2 * t2], axis=-1)

    p = 3
    return ParametricFamily(
        name="bvn-cholesky",
        param_dim=p,
        obs_dim=2,
        param_names=("theta1", "theta2", "theta3"),
        log_density=log_density,
        score=score,
        sampler=sampler,
        window=lambda theta: (np.zeros(2), tmat(theta)),
        in_domain=lambda th: bool(th[0] > 0 and th[1] > 0),
        domain_text="theta1 > 0, theta2 > 0",
        support=((-np.inf, np.inf), (-np.inf, np.inf)),
        mode=lambda theta: np.zeros(2),
        estimate=estimate,
        param_transforms=("log", "log", "identity"),
        named_priors={
            "uniform": uniform_prior(p),
            "jeffreys": power_prior("jeffreys", p, [-2, 0, 0]),
            "right-haar": power_prior("right-haar", p, [-1, -1, 0]),
        },
        oracles={
            "fisher": fisher_oracle,
            "hpd_threshold": lambda theta, alpha: theta[0] * theta[1] * (1 - np.asarray(alpha)) / (2 * np.pi),
            "xi": xi_oracle,
            "R": R,
        },
        description="zero-mean bivariate normal in the orthogonal Cholesky parameterisation",
        quadratic_form=quadratic_form,
    )


def bvn_upmp_prior(a: float, b: float) -> PriorField:
    """Member of the bvn-cholesky matching family, in theta coordinates.

    On the (sigma1, sigma2, rho) scale the prior is Jeffreys' prior times
    (sigma2 / sigma1)^a (1 - rho^2)^b.  With x = theta1/theta2 and y = theta3
    one has (sigma2/sigma1)^2 = x^2 + y^2 and 1 - rho^2 = x^2 / (x^2 + y^2),
    so in theta coordinates the prior is theta1^-2 h(x, y) with
    h = (x^2 + y^2)^(a/2 - b) x^(2b).  (a, b) = (1, 1/2) gives the right Haar
    prior 1/(theta1 theta2).
    """

    def logp(th):
        th = np.asarray(th, dtype=float)
        x = th[..., 0] / th[..., 1]
        y = th[..., 2]
        return -2 * np.log(th[..., 0]) + (0.5 * a - b) * np.log(x * x + y * y) + 2 * b * np.log(x)

    def grad(th):
        t1, t2, t3 = (float(v) for v in th)
        x, y = t1 / t2, t3
        r2 = x * x + y * y
        c = 0.5 * a - b
        dx = c * 2 * x / r2 + 2 * b / x
        dy = c * 2 * y / r2
        return np.array([-2 / t1 + dx / t2, -dx * x / t2, dy])

    return PriorField(f"bvn-upmp(a={a:g},b={b:g})", logp, grad)


def _mvlocation_spherical_2d() -> ParametricFamily:
    def log_density(x, theta):
        d = np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)
        return -0.5 * np.sum(d * d, axis=-1) - LOG_2PI

    def score(x, theta):
        return np.asarray(x, dtype=float) - np.asarray(theta, dtype=float)

    def quadratic_form(theta):
        th = np.asarray(theta, dtype=float)
        half = np.full(th.shape[:-1], -0.5)
        return np.stack([-0.5 * np.sum(th * th, axis=-1) - LOG_2PI, th[..., 0], th[..., 1],
                         half, 0.0 * half, half], axis=-1)

    p = 2
    return ParametricFamily(
        name="mvlocation-spherical-2d",
        param_dim=p,
        obs_dim=2,
        param_names=("theta1", "theta2"),
        log_density=log_density,
        score=score,
        sampler=lambda theta, rng, size: np.asarray(theta) + rng.standard_normal((size, 2)),
        window=lambda theta: (np.asarray(theta, dtype=float), np.eye(2)),
        in_domain=lambda th: True,
        domain_text="all real",
        support=((-np.inf, np.inf), (-np.inf, np.inf)),
        mode=lambda theta: np.asarray(theta, dtype=float),
        estimate=lambda data: np.mean(np.asarray(data, dtype=float), axis=0),
        param_transforms=("identity", "identity"),
        named_priors={
            "uniform": uniform_prior(p),
            "jeffreys": uniform_prior(p),
            "right-haar": uniform_prior(p),
        },
        oracles={
            "fisher": lambda theta: np.eye(2),
            "hpd_threshold": lambda theta, alpha: (1 - np.asarray(alpha)) / (2 * np.pi),
            "xi": lambda theta, alpha: np.zeros(np.shape(alpha) + (2,)),
        },
        description="bivariate spherical normal location model",
        quadratic_form=quadratic_form,
    )


# ---------------------------------------------------------------------------
# Catalogue
# ---------------------------------------------------------------------------

T_DOFS = (1, 2, 5)


def _normal_location():
    pmap = LocScaleMap(1, ("param", 0), ("const", 1.0))
    flat = uniform_prior(1)
    return location_scale_family(
        "normal-location", _normal_base(), pmap, ("theta",),
        estimate=lambda d: np.array([float(np.mean(d))]),
        transforms=("identity",),
        priors={"jeffreys": PriorField("jeffreys", flat.log_prior, flat.log_prior_gradient),
                "right-haar": PriorField("right-haar", flat.log_prior, flat.log_prior_gradient)},
        description="N(theta, 1)",
    )


def _location_scale(base: BaseDensity, name: str):
    pmap = LocScaleMap(2, ("param", 0), ("param", 1))
    return location_scale_family(
        name, base, pmap, ("theta1", "theta2"),
        priors={"right-haar": power_prior("right-haar", 2, [0, -1]),
                "jeffreys": power_prior("jeffreys", 2, [0, -2])},
        description=f"theta2^-1 f*((x - theta1)/theta2), f* = {base.name}",
    )


def _normal_mean_eq_var():
    pmap = LocScaleMap(1, ("param", 0), ("sqrt", 0))

    def jl(th):
        th = np.asarray(th, dtype=float)[..., 0]
        return 0.5 * np.log(1 / th + 0.5 / th**2)

    def jg(th):
        t = float(th[0])
        return np.array([0.5 * (-1 / t**2 - 1 / t**3) / (1 / t + 0.5 / t**2)])

    return location_scale_family(
        "normal-mean-eq-var", _normal_base(), pmap, ("theta",),
        estimate=lambda d: np.array([max(float(np.mean(d)), 1e-3)]),
        transforms=("log",),
        priors={"jeffreys": PriorField("jeffreys", jl, jg)},
        description="N(theta, theta), theta > 0",
    )


_BUILDERS = {
    "normal-location": _normal_location,
    "location-scale-normal": lambda: _location_scale(_normal_base(), "location-scale-normal"),
    "location-scale-logistic": lambda: _location_scale(_logistic_base(), "location-scale-logistic"),
    "location-scale-gumbel": lambda: _location_scale(_gumbel_base(), "location-scale-gumbel"),
    "normal-mean-eq-var": _normal_mean_eq_var,
    "bvn-cholesky": _bvn_cholesky,
    "mvlocation-spherical-2d": _mvlocation_spherical_2d,
}
for _nu in T_DOFS:
    _BUILDERS[f"location-scale-t({_nu})"] = (
        lambda nu=_nu: _location_scale(_t_base(float(nu)), f"location-scale-t({nu})")
    )

_CACHE: dict = {}


def list_families() -> list[str]:
    return sorted(_BUILDERS)


def builtin_family(name: str) -> ParametricFamily:
    """Return a fully populated built-in family by name."""
    key = name.strip().replace(" ", "")
    if key not in _BUILDERS:
        raise KeyError(f"unknown family {name!r}; known: {', '.join(list_families())}")
    if key not in _CACHE:
        _CACHE[key] = _BUILDERS[key]()
    return _CACHE[key]


def univariate_builtins() -> list[str]:
    return [n for n in list_families() if builtin_family(n).obs_dim == 1]


# ---------------------------------------------------------------------------
# User-declared families
# ---------------------------------------------------------------------------

_THETA_RE = re.compile(r"theta(\d+)")


def _parse_slot(text, allowed):
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return ("const", float(text))
    s = str(text).strip().replace(" ", "")
    m = _THETA_RE.fullmatch(s)
    if m:
        return ("param", int(m.group(1)) - 1)
    for fn in ("exp", "sqrt"):
        if fn in allowed:
            m = re.fullmatch(fn + r"\(theta(\d+)\)", s)
            if m:
                return (fn, int(m.group(1)) - 1)
    try:
        return ("const", float(s))
    except ValueError:
        raise ValueError(f"cannot parse combinator {text!r}") from None


def family_from_spec(spec: dict) -> ParametricFamily:
    """Build a family from a declarative spec (see docs/config.md).

    ``{"base": "t(5)", "location": "theta1", "scale": "exp(theta2)"}``
    """
    if not isinstance(spec, dict):
        raise ValueError("family spec must be a mapping")
    unknown = set(spec) - {"base", "location", "scale", "name"}
    if unknown:
        raise ValueError(f"unknown family keys: {sorted(unknown)}")
    base = base_density(str(spec.get("base", "normal")))
    loc = _parse_slot(spec.get("location", "theta1"), ())
    scale = _parse_slot(spec.get("scale", 1.0), ("exp", "sqrt"))
    idx = {s[1] for s in (loc, scale) if s[0] != "const"}
    if not idx:
        raise ValueError("family spec has no free parameter")
    p = max(idx) + 1
    if idx != set(range(p)):
        raise ValueError("parameters must be numbered theta1..thetap without gaps")
    if scale[0] == "const" and scale[1] <= 0:
        raise ValueError("constant scale must be positive")
    pmap = LocScaleMap(p, loc, scale)
    name = spec.get("name") or f"user[{base.name};{spec.get('location', 'theta1')};{spec.get('scale', 1.0)}]"
    return location_scale_family(str(name), base, pmap, tuple(f"theta{i + 1}" for i in range(p)))


def resolve_family(ref) -> ParametricFamily:
    if isinstance(ref, ParametricFamily):
        return ref
    if isinstance(ref, dict):
        return family_from_spec(ref)
    return builtin_family(str(ref))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool
    note: str = ""


@dataclass
class FamilyDiagnostics:
    family: str
    theta: list
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"{self.family} at theta={self.theta}"]
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.name:<22} err={c.error:.3e} tol={c.tolerance:.1e} {c.note}")
        return "\n".join(lines)


def _probe_points(fam, theta):
    center, scale = fam.window(theta)
    if fam.obs_dim == 1:
        return center + scale * np.array([-2.3, -1.1, -0.4, 0.2, 0.9, 1.6, 2.8])
    z = np.array([[0.3, -1.2], [1.1, 0.4], [-0.7, 0.9], [2.0, 1.5], [-1.4, -0.3]])
    return np.asarray(center) + z @ np.asarray(scale).T


def _rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def validate_family(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG, *,
                    n_samples: int = 10_000, seed: int = 0, mass_tol: float = 1e-8,
                    fd_tol: float = 1e-5, ks_pvalue: float = 1e-3) -> FamilyDiagnostics:
    """Numerically check every invariant of a family at ``theta``."""
    from .fisher import fisher_info  # local: fisher depends on this module
    from .errors import NonRegularModel

    theta = fam.check_theta(theta)
    checks = []
    pts = _probe_points(fam, theta)

    # normalisation
    if fam.obs_dim == 1:
        c, s = fam.window(theta)
        (lo, hi), = fam.support
        res = integrate_1d(lambda x: fam.density(x, theta), lo, hi, cfg, center=c, scale=s)
        mass, note = res.value, f"quad err est {res.error:.1e}"
    else:
        x, w = obs_rule(fam, theta, cfg)
        mass, note = float(w @ fam.density(x, theta)), "polar rule"
    checks.append(CheckResult("density_mass", abs(mass - 1.0), mass_tol, abs(mass - 1.0) <= mass_tol, note))

    # score against finite differences of log f
    fd = np.stack([fd_gradient(lambda t: float(fam.log_density(xi, t)), theta, cfg) for xi in pts])
    err = _rel_err(fam.score(pts, theta), fd)
    checks.append(CheckResult("score_fd", err, fd_tol, err <= fd_tol))

    if fam.obs_dim == 1:
        if fam.score_x_derivative is not None:
            h = EPS ** (1 / 3) * (1 + np.abs(pts))
            fdx = (fam.score(pts + h, theta) - fam.score(pts - h, theta)) / (2 * h)[:, None]
            err = _rel_err(fam.score_x_derivative(pts, theta), fdx)
            checks.append(CheckResult("score_x_fd", err, fd_tol, err <= fd_tol))
        if fam.cdf is not None:
            c, s = fam.window(theta)
            num = np.array([integrate_1d(lambda u: fam.density(u, theta), -np.inf, xi, cfg,
                                         center=c, scale=s).value for xi in pts])
            err = _rel_err(fam.cdf(pts, theta), num)
            checks.append(CheckResult("cdf_vs_density", err, mass_tol, err <= mass_tol))
            if fam.cdf_theta_gradient is not None:
                fd = np.stack([fd_gradient(lambda t: float(fam.cdf(xi, t)), theta, cfg) for xi in pts])
                err = _rel_err(fam.cdf_theta_gradient(pts, theta), fd)
                checks.append(CheckResult("cdf_theta_fd", err, fd_tol, err <= fd_tol))
            rng = np.random.Generator(np.random.Philox(seed))
            sample = fam.sample(theta, rng, n_samples)
            ks = stats.kstest(sample, lambda u: fam.cdf(u, theta))
            checks.append(CheckResult("sampler_ks", float(ks.statistic), ks_pvalue, ks.pvalue >= ks_pvalue,
                                      f"p-value {ks.pvalue:.3g}, n={n_samples}"))
    else:
        # the score has mean zero under f: a sampler check that needs no CDF
        rng = np.random.Generator(np.random.Philox(seed))
        sample = fam.sample(theta, rng, n_samples)
        sc = fam.score(sample, theta)
        zstat = np.abs(sc.mean(axis=0)) / (sc.std(axis=0, ddof=1) / math.sqrt(n_samples))
        zmax = float(zstat.max())
        checks.append(CheckResult("sampler_score_mean", zmax, 4.5, zmax <= 4.5, f"max |z| over components, n={n_samples}"))
        if fam.quadratic_form is not None:
            feats = quadratic_features(pts)
            err = _rel_err(feats @ fam.quadratic_form(theta), fam.log_density(pts, theta))
            checks.append(CheckResult("quadratic_form", err, 1e-12, err <= 1e-12))

    try:
        info = fisher_info(fam, theta, cfg)
        ev = float(np.linalg.eigvalsh(info.g).min())
        checks.append(CheckResult("fisher_nonsingular", ev, 0.0, ev > 0, "min eigenvalue of g"))
    except NonRegularModel as exc:
        checks.append(CheckResult("fisher_nonsingular", float("nan"), 0.0, False, str(exc)))

    return FamilyDiagnostics(fam.name, theta.tolist(), checks)

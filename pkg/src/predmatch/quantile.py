"""Quantile matching: frequentist quantiles, mu_t, the level-alpha residual,
the h field, the uniformly matching prior gradient and related diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BracketError, DomainError, NotAGradientField
from .family import ParametricFamily, PriorField
from .fisher import fisher_info, jeffreys_gradient
from .numerics import (
    DEFAULT_CONFIG,
    NumericsConfig,
    alpha_grid,
    fd_jacobian,
    fd_steps,
    find_root_vec,
    gauss_legendre,
    window_rule,
)

# ---------------------------------------------------------------------------
# Quantiles and mu
# ---------------------------------------------------------------------------


def _require_univariate(fam):
    if fam.obs_dim != 1:
        raise ValueError(f"{fam.name}: quantile matching needs univariate observations")
    if fam.cdf is None:
        raise ValueError(f"{fam.name}: quantile matching needs a distribution function")


def freq_quantile(fam: ParametricFamily, theta, alpha, cfg: NumericsConfig = DEFAULT_CONFIG):
    """Upper alpha quantile q: 1 - F(q; theta) = alpha.  Vectorised over alpha."""
    _require_univariate(fam)
    theta = fam.check_theta(theta)
    a = np.asarray(alpha, dtype=float)
    if np.any((a <= 0) | (a >= 1)):
        raise DomainError("alpha must lie in (0, 1)")
    flat = a.ravel()
    center, scale = fam.window(theta)
    (lo_sup, hi_sup), = fam.support

    def fn(x):
        return fam.survival(x, theta) - flat

    lo = np.full(flat.shape, center - scale)
    hi = np.full(flat.shape, center + scale)
    width = scale
    for _ in range(200):
        flo, fhi = fn(lo), fn(hi)
        bad_lo, bad_hi = flo < 0, fhi > 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        width *= 2.0
        lo = np.where(bad_lo, np.maximum(center - width, lo_sup), lo)
        hi = np.where(bad_hi, np.minimum(center + width, hi_sup), hi)
    else:
        raise BracketError(f"{fam.name}: quantile not bracketed inside the support window")
    q = find_root_vec(fn, lo, hi, flo, fhi)
    return q.reshape(a.shape) if a.ndim else float(q[0])


@dataclass(frozen=True)
class QuantileSlice:
    theta: np.ndarray
    alpha: float
    q: float
    mu: np.ndarray
    mu_identity_err: float | None = None
    notice: str = ""


def mu_tail(fam: ParametricFamily, theta, q, cfg: NumericsConfig = DEFAULT_CONFIG) -> np.ndarray:
    """mu_t = integral of f_t over (q, inf) by quadrature; q may be an array."""
    q = np.asarray(q, dtype=float)
    center, scale = fam.window(theta)
    (_, hi), = fam.support
    x, w = window_rule(q, hi, center, scale, cfg)
    ft = fam.score(x, theta) * (w * fam.density(x, theta))[..., None]
    return ft.sum(axis=-2)


def mu_vector(fam: ParametricFamily, theta, alpha, cfg: NumericsConfig = DEFAULT_CONFIG):
    """mu_t(theta, alpha) for scalar or array alpha (shape alpha.shape + (p,))."""
    theta = fam.check_theta(theta)
    q = freq_quantile(fam, theta, alpha, cfg)
    return mu_tail(fam, theta, q, cfg)


def quantile_slice(fam: ParametricFamily, theta, alpha: float, cfg: NumericsConfig = DEFAULT_CONFIG) -> QuantileSlice:
    theta = fam.check_theta(theta)
    q = freq_quantile(fam, theta, alpha, cfg)
    mu = mu_tail(fam, theta, q, cfg)
    if fam.cdf_theta_gradient is not None:
        err = float(np.max(np.abs(mu + fam.cdf_theta_gradient(q, theta))))
        return QuantileSlice(theta, float(alpha), float(q), mu, err)
    return QuantileSlice(theta, float(alpha), float(q), mu, None,
                         "no cdf_theta_gradient: -F_t cross-check skipped")


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchingTerms:
    """Prior-independent pieces of a matching residual at one theta.

    The residual of a prior with log-gradient d lambda is
    ``u @ d lambda + div`` where u = g^-1 v and div = d_s u_s, v being mu
    (quantile matching) or xi (HPD matching).
    """

    theta: np.ndarray
    alphas: np.ndarray
    v: np.ndarray
    u: np.ndarray
    div: np.ndarray
    div_err: np.ndarray

    def residual(self, prior_gradient) -> np.ndarray:
        return self.u @ np.asarray(prior_gradient, dtype=float) + self.div


def matching_terms(fam: ParametricFamily, theta, alphas, vfun: Callable,
                   cfg: NumericsConfig = DEFAULT_CONFIG, step: float | None = None) -> MatchingTerms:
    """Assemble u = g^-1 v and its divergence by central differences of u.

    The error estimate compares steps h and 2h (Richardson): |D_h - D_2h| / 3.
    """
    theta = fam.check_theta(theta)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    h = fd_steps(theta, cfg.fd_step_theta if step is None else step)

    def u_at(th):
        fam.check_theta(th)
        return vfun(th, alphas) @ fisher_info(fam, th, cfg).g_inv

    v0 = vfun(theta, alphas)
    u0 = v0 @ fisher_info(fam, theta, cfg).g_inv
    d1 = np.zeros(len(alphas))
    d2 = np.zeros(len(alphas))
    for s in range(fam.param_dim):
        e = np.zeros(fam.param_dim)
        e[s] = h[s]
        try:
            up2, dn2 = u_at(theta + 2 * e), u_at(theta - 2 * e)
        except DomainError:
            raise DomainError(f"theta={theta.tolist()} too close to the domain boundary for the stencil") from None
        d1 += (u_at(theta + e)[:, s] - u_at(theta - e)[:, s]) / (2 * h[s])
        d2 += (up2[:, s] - dn2[:, s]) / (4 * h[s])
    div = (4 * d1 - d2) / 3
    return MatchingTerms(theta, alphas, v0, u0, div, np.abs(d1 - d2) / 3)


def quantile_terms(fam, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG) -> MatchingTerms:
    _require_univariate(fam)
    return matching_terms(fam, theta, alphas, lambda th, a: mu_vector(fam, th, a, cfg), cfg)


def quantile_residual(fam: ParametricFamily, prior: PriorField, theta, alpha,
                      cfg: NumericsConfig = DEFAULT_CONFIG):
    """epsilon(theta, alpha) = g^st mu_t d_s lambda + d_s(g^st mu_t).

    Zero exactly when ``prior`` is level-alpha matching at ``theta``; the
    coverage of the predictive upper alpha quantile is alpha - epsilon / n to
    first order.  Scalar alpha gives a float, array alpha an array.
    """
    t = quantile_terms(fam, theta, alpha, cfg)
    eps = t.residual(prior.gradient(t.theta))
    return float(eps[0]) if np.ndim(alpha) == 0 else eps.reshape(np.shape(alpha))


# ---------------------------------------------------------------------------
# h field and the uniformly matching prior
# ---------------------------------------------------------------------------


def _cdf_theta_grad(fam, x, theta, cfg):
    if fam.cdf_theta_gradient is not None:
        return fam.cdf_theta_gradient(x, theta)
    h = fd_steps(theta, cfg.fd_step_theta)
    cols = []
    for s in range(fam.param_dim):
        e = np.zeros(fam.param_dim)
        e[s] = h[s]
        cols.append((fam.cdf(x, theta + e) - fam.cdf(x, theta - e)) / (2 * h[s]))
    return np.stack(cols, axis=-1)


def h_field(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG) -> np.ndarray:
    """h_r = g^st integral (F_s l_r - F_r l_s) d l_t / dx dx.

    The bracket is antisymmetric in (r, s), so for p = 1 every integrand
    value is exactly zero.
    """
    _require_univariate(fam)
    theta = fam.check_theta(theta)
    info = fisher_info(fam, theta, cfg)
    center, scale = fam.window(theta)
    (lo, hi), = fam.support
    x, w = window_rule(lo, hi, center, scale, cfg)
    F = _cdf_theta_grad(fam, x, theta, cfg)
    L = fam.score(x, theta)
    dL = fam.dscore_dx(x, theta)
    # K[r, s, t] = sum_n w (F_s l_r - F_r l_s) dl_t
    A = np.einsum("n,nr,ns,nt->rst", w, L, F, dL)
    K = A - np.transpose(A, (1, 0, 2))
    return np.einsum("st,rst->r", info.g_inv, K)


def upmp_gradient(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Log-gradient of the unique uniformly matching prior (when one exists):
    Jeffreys' log-gradient plus the h field."""
    return jeffreys_gradient(fam, theta, cfg) + h_field(fam, theta, cfg)


def local_prior_gradient(fam: ParametricFamily, theta, theta0, cfg: NumericsConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Data-dependent approximation: Jeffreys' log-gradient at theta plus h at theta0."""
    fam.check_theta(theta0)
    return jeffreys_gradient(fam, theta, cfg) + h_field(fam, theta0, cfg)


# ---------------------------------------------------------------------------
# Gradient-field diagnostics and prior reconstruction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurlReport:
    is_gradient: bool
    max_curl: float
    tolerance: float
    worst_theta: list
    per_point: list = field(default_factory=list)


def gradient_field_test(fieldfn: Callable, theta_grid, cfg: NumericsConfig = DEFAULT_CONFIG,
                        tol: float | None = None, step: float | None = None) -> CurlReport:
    """Largest |d_s v_r - d_r v_s| over the grid by central differences.

    Fields that are themselves finite-difference gradients are differenced
    with the larger nested step to keep rounding noise below the tolerance.
    """
    tol = cfg.curl_tol if tol is None else tol
    step = cfg.fd_step_nested if step is None else step
    worst, worst_th, per = 0.0, None, []
    for th in np.atleast_2d(np.asarray(theta_grid, dtype=float)):
        J = fd_jacobian(fieldfn, th, cfg, step)
        c = float(np.max(np.abs(J - J.T))) if J.size > 1 else 0.0
        per.append(c)
        if worst_th is None or c > worst:
            worst, worst_th = c, th.tolist()
    return CurlReport(worst <= tol, worst, tol, worst_th, per)


def _axis_path_integral(fieldfn, a, b, order, nodes):
    x, w = gauss_legendre(nodes, 0.0, 1.0)
    cur = a.copy()
    total = 0.0
    for r in order:
        d = b[r] - cur[r]
        if d != 0.0:
            for xi, wi in zip(x, w):
                pt = cur.copy()
                pt[r] = cur[r] + xi * d
                total += wi * d * float(np.asarray(fieldfn(pt))[r])
        cur[r] = b[r]
    return total


@dataclass(frozen=True)
class PathIntegral:
    value: float
    alternative: float
    path_difference: float


def path_integrals(fieldfn: Callable, theta_ref, theta, cfg: NumericsConfig = DEFAULT_CONFIG,
                   panels: int = 2) -> PathIntegral:
    a = np.asarray(theta_ref, dtype=float)
    b = np.asarray(theta, dtype=float)
    p = len(a)
    nodes = cfg.path_nodes * panels
    fwd = _axis_path_integral(fieldfn, a, b, list(range(p)), nodes)
    rev = _axis_path_integral(fieldfn, a, b, list(reversed(range(p))), nodes)
    return PathIntegral(fwd, rev, abs(fwd - rev))


def reconstruct_log_prior(fieldfn: Callable, theta_ref, theta, cfg: NumericsConfig = DEFAULT_CONFIG,
                          tol: float | None = None) -> float:
    """lambda(theta) - lambda(theta_ref) by axis-ordered line integrals.

    The coordinate axes are traversed in two opposite orders; if the results
    differ by more than ``tol`` the field is not a gradient and
    :class:`NotAGradientField` is raised.
    """
    tol = cfg.path_tol if tol is None else tol
    res = path_integrals(fieldfn, theta_ref, theta, cfg)
    if res.path_difference > tol:
        raise NotAGradientField(
            f"line integrals differ by {res.path_difference:.3e} between axis orders (tolerance {tol:.1e})")
    return 0.5 * (res.value + res.alternative)


def reconstructed_prior(fieldfn: Callable, theta_ref, cfg: NumericsConfig = DEFAULT_CONFIG,
                        name: str = "reconstructed") -> PriorField:
    """PriorField whose log density is the line integral of ``fieldfn``.

    Its gradient is taken by central differences of the line integral, so
    residuals computed with it exercise the reconstruction itself.
    """
    ref = np.asarray(theta_ref, dtype=float)

    def logp(th):
        th = np.asarray(th, dtype=float)
        if th.ndim == 1:
            return path_integrals(fieldfn, ref, th, cfg).value
        flat = th.reshape(-1, th.shape[-1])
        return np.array([path_integrals(fieldfn, ref, t, cfg).value for t in flat]).reshape(th.shape[:-1])

    def grad(th):
        th = np.asarray(th, dtype=float)
        h = fd_steps(th, cfg.fd_step_nested)
        out = np.empty(len(th))
        for r in range(len(th)):
            e = np.zeros(len(th))
            e[r] = h[r]
            out[r] = (logp(th + e) - logp(th - e)) / (2 * h[r])
        return out

    return PriorField(name, logp, grad)


# ---------------------------------------------------------------------------
# Average prediction error
# ---------------------------------------------------------------------------


def mu_alpha_second_derivative(fam, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """d^2 mu / d alpha^2 by central differences in alpha (relative step)."""
    a = np.asarray(alphas, dtype=float)
    h = cfg.alpha_fd_step * np.minimum(a, 1 - a)
    mu = mu_vector(fam, theta, np.concatenate([a - h, a, a + h]), cfg)
    n = len(a)
    return (mu[:n] - 2 * mu[n:2 * n] + mu[2 * n:]) / (h * h)[:, None]


def mu_alpha_second_derivative_exact(fam, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """Closed form: d/d alpha l_t(q) = -(d l_t/dx)(q) / f(q)."""
    q = freq_quantile(fam, theta, alphas, cfg)
    return -fam.dscore_dx(q, theta) / fam.density(q, theta)[..., None]


def avg_prediction_error(fam: ParametricFamily, prior: PriorField, theta, r: int,
                         cfg: NumericsConfig = DEFAULT_CONFIG, k: int | None = None,
                         exact_second_derivative: bool = False) -> float:
    """Integral over alpha of (d^2 mu_r / d alpha^2) epsilon(theta, alpha)."""
    theta = fam.check_theta(theta)
    if not 0 <= r < fam.param_dim:
        raise IndexError(f"parameter index {r} out of range")
    grid = alpha_grid(k or cfg.alpha_nodes)
    d2 = (mu_alpha_second_derivative_exact if exact_second_derivative else mu_alpha_second_derivative)(
        fam, theta, grid.nodes, cfg)
    eps = quantile_residual(fam, prior, theta, grid.nodes, cfg)
    return float(grid.integrate(d2[:, r] * eps))


# ---------------------------------------------------------------------------
# Sweeps and reports
# ---------------------------------------------------------------------------

DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))


def residual_sweep(fam: ParametricFamily, priors: Sequence[PriorField], thetas, alphas=DEFAULT_ALPHAS,
                   cfg: NumericsConfig = DEFAULT_CONFIG, kind: str = "quantile", workers: int | None = None):
    """Residual reports for several priors over a theta grid x alpha list.

    The prior-independent terms are computed once per theta and shared
    between priors; theta cells are optionally spread over a thread pool.
    """
    from .report import ResidualReport  # local import keeps report optional for library users
    from .hpd import hpd_extras, hpd_terms

    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    alphas = np.asarray(alphas, dtype=float)
    if kind == "quantile":
        def cell(th):
            return quantile_terms(fam, th, alphas, cfg), {}
    elif kind == "hpd":
        def cell(th):
            return hpd_terms(fam, th, alphas, cfg), hpd_extras(fam, th, alphas, cfg)
    else:
        raise ValueError(f"unknown matching kind {kind!r}")

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            cells = list(ex.map(cell, thetas))
    else:
        cells = [cell(th) for th in thetas]

    form = None
    if kind == "hpd":
        from .hpd import separability_diagnosis
        form = separability_diagnosis(fam, thetas, cfg).form

    reports = []
    for prior in priors:
        eps = np.stack([t.residual(prior.gradient(t.theta)) for t, _ in cells])
        err = np.stack([t.div_err for t, _ in cells])
        extras = {}
        for key in (cells[0][1] if cells else {}):
            extras[key] = np.stack([np.broadcast_to(np.asarray(ex[key], dtype=object), alphas.shape)
                                    for _, ex in cells])
        if form is not None:
            extras["form"] = np.full((len(thetas), len(alphas)), form, dtype=object)
        reports.append(ResidualReport(fam.name, prior.name, kind, thetas, alphas, eps, err,
                                      cfg.config_hash(), extras))
    return reports

"""Fisher information, Jeffreys' prior and the alpha-integral form of g."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonRegularModel, SingularMatrixError
from .family import ParametricFamily, PriorField, obs_rule
from .numerics import DEFAULT_CONFIG, NumericsConfig, alpha_grid, fd_steps, matrix_inverse


@dataclass(frozen=True)
class InfoMatrix:
    """Per-observation Fisher information at ``theta``.

    Attributes
    ----------
    g, g_inv : ndarray
        Information matrix and its inverse.
    log_det : float
        log |g|.
    asymmetry : float
        Largest |g_st - g_ts| before symmetrisation.
    """

    g: np.ndarray
    g_inv: np.ndarray
    log_det: float
    theta: np.ndarray
    asymmetry: float = 0.0

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.g).min())


def _finish(g_raw, theta, cfg) -> InfoMatrix:
    asym = float(np.max(np.abs(g_raw - g_raw.T))) if g_raw.size else 0.0
    if asym > 1e-6 * max(1.0, float(np.max(np.abs(g_raw)))):
        warnings.warn(f"Fisher information asymmetric by {asym:.2e}; quadrature may be inaccurate",
                      RuntimeWarning, stacklevel=3)
    g = 0.5 * (g_raw + g_raw.T)
    if not np.all(np.isfinite(g)):
        raise NonRegularModel(f"non-finite Fisher information at theta={theta.tolist()}")
    ev = np.linalg.eigvalsh(g)
    if ev.min() <= 0:
        raise NonRegularModel(f"Fisher information not positive definite at theta={theta.tolist()} (eigs {ev})")
    try:
        g_inv = matrix_inverse(g, cfg.cond_max)
    except SingularMatrixError as exc:
        raise NonRegularModel(str(exc)) from None
    sign, logdet = np.linalg.slogdet(g)
    return InfoMatrix(g, g_inv, float(logdet), theta, asym)


def fisher_info(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG) -> InfoMatrix:
    """g_st = integral of l_s l_t f over the support, as a score outer product."""
    theta = fam.check_theta(theta)
    x, w = obs_rule(fam, theta, cfg)
    sc = fam.score(x, theta)
    wf = w * fam.density(x, theta)
    g = (sc * wf[:, None]).T @ sc
    return _finish(g, theta, cfg)


def fisher_via_alpha(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG,
                     k: int | None = None) -> InfoMatrix:
    """g_ij as the alpha-integral of l_i(q) l_j(q), q the upper alpha quantile.

    Uses d mu_j / d alpha = l_j(q(theta, alpha); theta).  The default grid is
    four times the configured alpha grid because the integrand has
    logarithmic end-point singularities.
    """
    from .quantile import freq_quantile  # local: quantile depends on this module

    if fam.obs_dim != 1:
        raise ValueError("fisher_via_alpha needs univariate observations")
    theta = fam.check_theta(theta)
    grid = alpha_grid(k or 4 * cfg.alpha_nodes)
    q = freq_quantile(fam, theta, grid.nodes, cfg)
    sc = fam.score(q, theta)
    g = (sc * grid.weights[:, None]).T @ sc
    return _finish(g, theta, cfg)


def jeffreys_gradient(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG,
                      step: float | None = None) -> np.ndarray:
    """d_r log |g|^(1/2) = (1/2) g^st d_r g_st, with d_r g by central differences."""
    theta = fam.check_theta(theta)
    info = fisher_info(fam, theta, cfg)
    h = fd_steps(theta, cfg.fd_step_theta if step is None else step)
    out = np.empty(fam.param_dim)
    for r in range(fam.param_dim):
        e = np.zeros(fam.param_dim)
        e[r] = h[r]
        dg = (fisher_info(fam, theta + e, cfg).g - fisher_info(fam, theta - e, cfg).g) / (2 * h[r])
        out[r] = 0.5 * np.sum(info.g_inv * dg)
    return out


def jeffreys_log_prior(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG) -> float:
    return 0.5 * fisher_info(fam, theta, cfg).log_det


def numeric_jeffreys_prior(fam: ParametricFamily, cfg: NumericsConfig = DEFAULT_CONFIG) -> PriorField:
    """Jeffreys' prior built from numerical Fisher information."""

    def logp(th):
        th = np.asarray(th, dtype=float)
        if th.ndim == 1:
            return jeffreys_log_prior(fam, th, cfg)
        flat = th.reshape(-1, th.shape[-1])
        return np.array([jeffreys_log_prior(fam, t, cfg) for t in flat]).reshape(th.shape[:-1])

    return PriorField("jeffreys-numeric", logp, lambda th: jeffreys_gradient(fam, th, cfg))

"""Highest-density matching: thresholds m, region integrals xi_t, the HPD
residual, the b matrix, the HPD uniformly matching prior and diagnostics of
linear dependence among the xi_t.

Highest-density regions of every supported density are star-shaped about
the family mode: along each ray from the mode (in the standardised frame
x = c + A z) the density decreases, so a superlevel set is described by one
radius per ray.  Region integrals are radial Gauss-Legendre quadratures up
to that radius, mapped by r = s / (1 - s) to cope with heavy tails, summed
over rays with the periodic trapezoid rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BracketError, DomainError, LinearlyDependentXi
from .family import ParametricFamily, PriorField
from .fisher import fisher_info
from .numerics import (
    DEFAULT_CONFIG,
    EPS,
    NumericsConfig,
    alpha_grid,
    clipped_alphas,
    fd_steps,
    find_root_vec,
    matrix_inverse,
    ray_directions,
    standard_rule,
)
from .quantile import MatchingTerms, matching_terms

# ---------------------------------------------------------------------------
# Ray geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RayFrame:
    """Polar frame x = center + A (r d) for star-shaped regions."""

    center: np.ndarray
    A: np.ndarray
    dirs: np.ndarray
    dir_weights: np.ndarray
    dim: int

    @property
    def jac(self) -> float:
        return abs(float(np.linalg.det(self.A)))

    @classmethod
    def build(cls, center, scale, dim, cfg: NumericsConfig):
        dirs, w = ray_directions(dim, cfg.n_angles)
        A = np.atleast_2d(np.asarray(scale, dtype=float))
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if A.shape != (dim, dim) or c.shape != (dim,):
            raise ValueError("window centre/scale do not match the observation dimension")
        return cls(c, A, np.asarray(dirs), np.asarray(w), dim)

    @classmethod
    def for_family(cls, fam: ParametricFamily, theta, cfg: NumericsConfig):
        _, scale = fam.window(theta)
        return cls.build(fam.mode_point(theta), scale, fam.obs_dim, cfg)

    def points(self, r):
        """Observation points at radius r (shape (..., n_dirs)) along every ray."""
        r = np.asarray(r, dtype=float)
        z = r[..., None] * self.dirs
        x = self.center + z @ self.A.T
        return x[..., 0] if self.dim == 1 else x


def _radial_rule(cfg: NumericsConfig, n: int | None = None):
    n = n or cfg.n_radial
    panels = 2
    order = max(2, n // panels)
    return standard_rule("unit", panels, order)


def ray_integral(frame: RayFrame, radii, integrand, cfg: NumericsConfig = DEFAULT_CONFIG,
                 n_radial: int | None = None):
    """Integral of integrand(x) over the star region {r <= radii} of ``frame``.

    ``radii`` has shape (..., n_dirs); ``integrand`` maps points of shape
    (..., n_nodes, n_dirs[, dim]) to values with an optional trailing axis.
    """
    radii = np.asarray(radii, dtype=float)
    u, v = _radial_rule(cfg, n_radial)
    s_star = radii[..., None, :]  # (..., 1, nd)
    s_star = s_star / (1.0 + s_star)
    s = s_star * u[:, None]  # (..., nr, nd)
    r = s / (1.0 - s)
    wt = s_star * v[:, None] / (1.0 - s) ** 2 * r ** (frame.dim - 1) * frame.dir_weights * frame.jac
    vals = np.asarray(integrand(frame.points(r)))
    if vals.ndim == wt.ndim:
        return np.sum(vals * wt, axis=(-2, -1))
    return np.sum(vals * wt[..., None], axis=(-3, -2))


# ---------------------------------------------------------------------------
# Exact single-density solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionSolution:
    alphas: np.ndarray
    log_m: np.ndarray
    radii: np.ndarray  # (n_alpha, n_dirs)
    mass: np.ndarray
    mass_err: np.ndarray

    @property
    def m(self):
        return np.exp(self.log_m)


class StarRegionSolver:
    """Superlevel sets {f >= t} of a density that decreases along rays."""

    def __init__(self, log_density, frame: RayFrame, cfg: NumericsConfig = DEFAULT_CONFIG, cdf=None):
        self.log_density = log_density
        self.frame = frame
        self.cfg = cfg
        self.cdf = cdf  # optional univariate distribution function
        self.log_peak = float(np.max(log_density(frame.points(np.zeros(len(frame.dirs))))))

    def log_profile(self, r):
        return self.log_density(self.frame.points(r))

    def radii(self, log_t):
        """Radius of {f >= t} along every ray; log_t has shape (n,)."""
        log_t = np.atleast_1d(np.asarray(log_t, dtype=float))
        nd = len(self.frame.dirs)
        target = np.broadcast_to(log_t[:, None], (len(log_t), nd))

        def fn(r):
            return self.log_profile(r) - target

        lo = np.zeros_like(target)
        flo = fn(lo)
        inside = flo > 0
        hi = np.ones_like(target)
        fhi = fn(hi)
        for _ in range(80):
            need = inside & (fhi >= 0)
            if not need.any():
                break
            hi = np.where(need, 2.0 * hi, hi)
            fhi = fn(hi)
        else:
            raise BracketError("density does not fall below the threshold along some ray")
        # rays where t exceeds the density at the centre have radius zero
        lo_s = np.where(inside, lo, 0.0)
        hi_s = np.where(inside, hi, 1.0)
        flo_s = np.where(inside, flo, 1.0)
        fhi_s = np.where(inside, fhi, -1.0)
        r = find_root_vec(fn, lo_s, hi_s, flo_s, fhi_s) if inside.any() else np.zeros_like(target)
        return np.where(inside, r, 0.0)

    def mass_from_radii(self, radii, n_radial=None):
        fr = self.frame
        if self.cdf is not None and fr.dim == 1:
            a = fr.center[0] + fr.A[0, 0] * radii[..., 0] * fr.dirs[0, 0]
            b = fr.center[0] + fr.A[0, 0] * radii[..., 1] * fr.dirs[1, 0]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            return self.cdf(hi) - self.cdf(lo)
        return ray_integral(fr, radii, lambda x: np.exp(self.log_density(x)), self.cfg, n_radial)

    def mass(self, log_t):
        return self.mass_from_radii(self.radii(log_t))

    def solve(self, alphas) -> RegionSolution:
        """Thresholds log m with mass{f >= m} = alpha, vectorised over alpha."""
        a = np.atleast_1d(np.asarray(alphas, dtype=float))
        if np.any((a <= 0) | (a >= 1)):
            raise DomainError("alpha must lie in (0, 1)")
        hi = np.full(a.shape, self.log_peak)
        drop = 4.0
        lo = hi - drop
        flo = self.mass(lo) - a
        while np.any(flo <= 0):
            drop *= 2
            if drop > 4096:
                raise BracketError("region mass does not reach alpha")
            lo = np.where(flo <= 0, self.log_peak - drop, lo)
            flo = self.mass(lo) - a
        fhi = -a  # mass of an empty region
        log_m = find_root_vec(lambda s: self.mass(s) - a, lo, hi, flo, fhi)
        radii = self.radii(log_m)
        mass = self.mass_from_radii(radii)
        err = np.abs(mass - a)
        if not (self.cdf is not None and self.frame.dim == 1):
            coarse = self.mass_from_radii(radii, n_radial=max(4, self.cfg.n_radial // 2))
            err = err + np.abs(mass - coarse)
        return RegionSolution(a, log_m, radii, mass, err)


def family_solver(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG) -> StarRegionSolver:
    theta = fam.check_theta(theta)
    frame = RayFrame.for_family(fam, theta, cfg)
    cdf = (lambda x: fam.cdf(x, theta)) if (fam.obs_dim == 1 and fam.cdf is not None) else None
    return StarRegionSolver(lambda x: fam.log_density(x, theta), frame, cfg, cdf)


def _xi_from_solution(fam, theta, solver: StarRegionSolver, sol: RegionSolution, cfg):
    fr = solver.frame
    if fam.obs_dim == 1 and fam.cdf_theta_gradient is not None:
        a = fr.center[0] + fr.A[0, 0] * sol.radii[:, 0] * fr.dirs[0, 0]
        b = fr.center[0] + fr.A[0, 0] * sol.radii[:, 1] * fr.dirs[1, 0]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return fam.cdf_theta_gradient(hi, theta) - fam.cdf_theta_gradient(lo, theta)
    return ray_integral(fr, sol.radii,
                        lambda x: fam.score(x, theta) * fam.density(x, theta)[..., None], cfg)


# ---------------------------------------------------------------------------
# Public single-family operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HpdSlice:
    theta: np.ndarray
    alpha: float
    m: float
    xi: np.ndarray
    region_mass_err: float


def _scalar_or_array(values, alpha):
    return float(values[0]) if np.ndim(alpha) == 0 else values.reshape(np.shape(alpha) + values.shape[1:])


def hpd_threshold(fam: ParametricFamily, theta, alpha, cfg: NumericsConfig = DEFAULT_CONFIG):
    """Density threshold m(theta, alpha) of the level-alpha highest-density region."""
    sol = family_solver(fam, theta, cfg).solve(alpha)
    return _scalar_or_array(sol.m, alpha)


def hpd_solution(fam: ParametricFamily, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    theta = fam.check_theta(theta)
    solver = family_solver(fam, theta, cfg)
    sol = solver.solve(alphas)
    xi = _xi_from_solution(fam, theta, solver, sol, cfg)
    return sol, xi


def xi_vector(fam: ParametricFamily, theta, alpha, cfg: NumericsConfig = DEFAULT_CONFIG):
    """xi_t(theta, alpha): integral of f_t over the level-alpha HPD region."""
    _, xi = hpd_solution(fam, theta, np.atleast_1d(alpha), cfg)
    return xi[0] if np.ndim(alpha) == 0 else xi.reshape(np.shape(alpha) + (fam.param_dim,))


def hpd_slice(fam: ParametricFamily, theta, alpha: float, cfg: NumericsConfig = DEFAULT_CONFIG) -> HpdSlice:
    sol, xi = hpd_solution(fam, theta, [alpha], cfg)
    return HpdSlice(np.asarray(theta, float), float(alpha), float(sol.m[0]), xi[0], float(sol.mass_err[0]))


def xi_alpha_derivative_boundary(fam: ParametricFamily, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """d xi_t / d alpha as a boundary average of l_t.

    Moving the threshold shifts mass and xi through the boundary only, so
    the derivative is the mean of l_t over the boundary weighted by
    r^(dim-1) / |d f / d r| along each ray.  Smooth in theta, so it can be
    differenced again; :func:`xi_alpha_derivative` is the independent
    finite-difference route.
    """
    theta = fam.check_theta(theta)
    solver = family_solver(fam, theta, cfg)
    sol = solver.solve(alphas)
    r = sol.radii
    h = 1e-5 * (1.0 + r)
    dlog = (solver.log_profile(r + h) - solver.log_profile(r - h)) / (2 * h)
    slope = np.abs(dlog) * np.exp(sol.log_m)[:, None]
    omega = solver.frame.dir_weights * r ** (solver.frame.dim - 1) / slope
    pts = solver.frame.points(r)
    sc = fam.score(pts, theta)
    return np.einsum("ad,adp->ap", omega, sc) / omega.sum(axis=1)[:, None]


# ---------------------------------------------------------------------------
# Residual
# ---------------------------------------------------------------------------


def hpd_terms(fam: ParametricFamily, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG) -> MatchingTerms:
    return matching_terms(fam, theta, alphas, lambda th, a: hpd_solution(fam, th, a, cfg)[1], cfg)


def hpd_residual(fam: ParametricFamily, prior: PriorField, theta, alpha, cfg: NumericsConfig = DEFAULT_CONFIG):
    """epsilon = g^st xi_t d_s lambda + d_s(g^st xi_t); the HPD analogue of
    the quantile residual."""
    t = hpd_terms(fam, theta, alpha, cfg)
    eps = t.residual(prior.gradient(t.theta))
    return float(eps[0]) if np.ndim(alpha) == 0 else eps.reshape(np.shape(alpha))


# ---------------------------------------------------------------------------
# b matrix and the HPD uniformly matching prior
# ---------------------------------------------------------------------------


def xi_alpha_derivative(fam, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """d xi / d alpha by central differences with step alpha_fd_step * min(alpha, 1 - alpha).

    Cross-check for :func:`xi_alpha_derivative_boundary`; too noisy near the
    alpha endpoints to be differenced again in theta.
    """
    a = np.asarray(alphas, dtype=float)
    h = cfg.alpha_fd_step * np.minimum(a, 1 - a)
    _, xi = hpd_solution(fam, theta, np.concatenate([a + h, a - h]), cfg)
    n = len(a)
    return (xi[:n] - xi[n:]) / (2 * h)[:, None]


@dataclass(frozen=True)
class BMatrix:
    """b_ij = integral over alpha of (d xi_i / d alpha)(d xi_j / d alpha).

    ``ratio`` is the smallest eigenvalue over max(trace b, 1e-10 trace g);
    ``singular`` applies the independence threshold to it.
    """

    b: np.ndarray
    eigenvalues: np.ndarray
    ratio: float
    threshold: float
    theta: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def eigen_gap(self) -> float:
        ev = self.eigenvalues
        return float(ev[-1] - ev[0])

    @property
    def singular(self) -> bool:
        return self.ratio <= self.threshold


def b_matrix(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG, k: int | None = None) -> BMatrix:
    theta = fam.check_theta(theta)
    grid = alpha_grid(k or cfg.alpha_nodes)
    dxi = xi_alpha_derivative_boundary(fam, theta, grid.nodes, cfg)
    b = (dxi * grid.weights[:, None]).T @ dxi
    b = 0.5 * (b + b.T)
    ev = np.linalg.eigvalsh(b)
    tr_g = float(np.trace(fisher_info(fam, theta, cfg).g))
    ratio = float(ev[0] / max(float(np.trace(b)), 1e-10 * tr_g))
    return BMatrix(b, ev, ratio, cfg.independence_threshold, theta)


def hpd_upmp_gradient(fam: ParametricFamily, theta, cfg: NumericsConfig = DEFAULT_CONFIG,
                      k: int | None = None) -> np.ndarray:
    """Log-gradient -g b^-1 c of the unique HPD uniformly matching prior.

    c_r = integral of (d xi_r / d alpha) D(alpha) with
    D = d_s(g^st d xi_t / d alpha) by central differences in theta.  Raises
    :class:`LinearlyDependentXi` when b is singular: the uniformly matching
    prior then either does not exist or is not unique.
    """
    theta = fam.check_theta(theta)
    B = b_matrix(fam, theta, cfg, k)
    if B.singular:
        raise LinearlyDependentXi(
            f"{fam.name}: b matrix singular at theta={theta.tolist()} "
            f"(eigenvalue ratio {B.ratio:.3e} <= {B.threshold:.1e}); "
            "either no uniformly matching prior exists or there are infinitely many",
            ratio=B.ratio)
    grid = alpha_grid(k or cfg.alpha_nodes)
    h = fd_steps(theta, cfg.fd_step_nested)

    def w_at(th):
        return xi_alpha_derivative_boundary(fam, th, grid.nodes, cfg) @ fisher_info(fam, th, cfg).g_inv

    D = np.zeros(len(grid))
    for s in range(fam.param_dim):
        e = np.zeros(fam.param_dim)
        e[s] = h[s]
        D += (w_at(theta + e)[:, s] - w_at(theta - e)[:, s]) / (2 * h[s])
    dxi = xi_alpha_derivative_boundary(fam, theta, grid.nodes, cfg)
    c = grid.integrate(dxi.T * D)
    g = fisher_info(fam, theta, cfg).g
    return -g @ matrix_inverse(B.b, 1e300) @ c


# ---------------------------------------------------------------------------
# Linear dependence / separability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeparabilityReport:
    """Numerical rank verdicts on xi_t(theta, alpha) over a theta grid.

    form:
      ``common-profile``  xi_t = Q_t(theta) R(alpha), one alpha profile everywhere;
      ``rank-one``        xi_t = U_t(theta) S(theta, alpha), rank one at each theta;
      ``per-component``   xi_t = Q_t(theta) R_t(alpha), each component separable;
      ``none``            none of these.
    Evidences are worst-case ratios of the second to the first singular
    value (zero for an all-zero matrix).  ``dependence`` is the worst ratio
    of the smallest to the largest singular value at a single theta: it is
    small exactly when the xi_t are linearly dependent in alpha.
    """

    form: str
    evidence: float
    evidence_common_profile: float
    evidence_rank_one: float
    evidence_per_component: float
    dependence: float
    dependent: bool
    tolerance: float
    n_theta: int


def _sv_ratio(M, k=1):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size <= k or s[0] == 0:
        return 0.0
    return float(s[k] / s[0])


def _min_sv_ratio(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0.0
    if M.shape[0] > len(s):
        return 0.0
    return float(s[-1] / s[0])


def xi_table(fam: ParametricFamily, thetas, alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """xi_t(theta_i, alpha_k) as an array (n_theta, p, K) with numerical zeros cleaned.

    Entries below 1e-9 sqrt(g_tt) are set to zero: they are rounding noise
    of integrals that vanish exactly.
    """
    rows = []
    for th in thetas:
        _, xi = hpd_solution(fam, th, alphas, cfg)
        g = fisher_info(fam, th, cfg).g
        floor = 1e-9 * np.sqrt(np.diag(g))
        xi = np.where(np.abs(xi) <= floor, 0.0, xi)
        rows.append(xi.T)
    return np.stack(rows)


def separability_diagnosis(fam: ParametricFamily, theta_grid, cfg: NumericsConfig = DEFAULT_CONFIG,
                           alphas=None, tol: float | None = None) -> SeparabilityReport:
    tol = cfg.separability_tol if tol is None else tol
    thetas = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if alphas is None:
        alphas = clipped_alphas(alpha_grid(cfg.alpha_nodes).nodes, cfg)
    X = xi_table(fam, thetas, np.asarray(alphas, dtype=float), cfg)  # (n, p, K)
    n, p, K = X.shape
    e_rank = max(_sv_ratio(X[i]) for i in range(n))
    e_common = _sv_ratio(X.reshape(n * p, K))
    e_comp = max(_sv_ratio(X[:, t, :]) for t in range(p))
    dep = max(_min_sv_ratio(X[i]) for i in range(n))
    if e_common <= tol:
        form, ev = "common-profile", e_common
    elif e_rank <= tol:
        form, ev = "rank-one", e_rank
    elif e_comp <= tol:
        form, ev = "per-component", e_comp
    else:
        form, ev = "none", e_comp
    return SeparabilityReport(form, ev, e_common, e_rank, e_comp, dep, dep <= tol, tol, n)


def hpd_extras(fam: ParametricFamily, theta, alphas, cfg: NumericsConfig = DEFAULT_CONFIG) -> dict:
    """Per-cell extra report columns: threshold m and the b eigenvalue ratio."""
    sol, _ = hpd_solution(fam, theta, alphas, cfg)
    B = b_matrix(fam, theta, cfg)
    return {"m": sol.m, "min_eig_b": np.full(len(np.atleast_1d(alphas)), B.ratio)}


# ---------------------------------------------------------------------------
# Tensor-grid cross-check
# ---------------------------------------------------------------------------


def region_mass_tensor(fam: ParametricFamily, theta, m: float, cfg: NumericsConfig = DEFAULT_CONFIG,
                       n: int = 256, half_width: float = 9.0, refine: int = 8) -> float:
    """Mass of {f >= m} on a tensor grid of the standardised plane.

    Cells whose corners disagree on membership are subdivided once into
    refine x refine sub-cells.  First-order accurate; used only to
    cross-check the ray solver.
    """
    if fam.obs_dim != 2:
        raise ValueError("tensor-grid cross-check is for bivariate families")
    theta = fam.check_theta(theta)
    center, A = fam.window(theta)
    A = np.asarray(A, dtype=float)
    jac = abs(np.linalg.det(A))
    edges = np.linspace(-half_width, half_width, n + 1)
    hcell = edges[1] - edges[0]
    logm = np.log(m)

    def logf(z):
        return fam.log_density(np.asarray(center) + z @ A.T, theta)

    Z = np.stack(np.meshgrid(edges, edges, indexing="ij"), axis=-1)
    inside_c = logf(Z) >= logm
    corners = inside_c[:-1, :-1].astype(int) + inside_c[1:, :-1] + inside_c[:-1, 1:] + inside_c[1:, 1:]
    mids = 0.5 * (edges[:-1] + edges[1:])
    M = np.stack(np.meshgrid(mids, mids, indexing="ij"), axis=-1)
    lf = logf(M)
    f = np.exp(lf)
    total = float(np.sum(np.where((corners == 4), f, 0.0))) * hcell**2
    mixed = np.argwhere((corners > 0) & (corners < 4))
    if len(mixed):
        sub = (np.arange(refine) + 0.5) / refine * hcell
        SX, SY = np.meshgrid(sub, sub, indexing="ij")
        base = np.stack([edges[mixed[:, 0]], edges[mixed[:, 1]]], axis=-1)
        pts = base[:, None, None, :] + np.stack([SX, SY], axis=-1)[None]
        lv = logf(pts)
        total += float(np.sum(np.where(lv >= logm, np.exp(lv), 0.0))) * (hcell / refine) ** 2
    return total * jac


# ---------------------------------------------------------------------------
# Tabulated regions for mixtures (posterior predictive densities)
# ---------------------------------------------------------------------------


class TabulatedRegion:
    """Superlevel sets of an expensive density (e.g. a posterior mixture).

    The log density and the radial mass integrand are tabulated once per
    ray on a uniform grid in s = log(1 + r) and interpolated by cubic
    splines, so each threshold iteration costs only spline evaluations.
    The log map keeps both light and heavy tails smooth.
    """

    def __init__(self, log_density, frame: RayFrame, cfg: NumericsConfig = DEFAULT_CONFIG,
                 n_s: int = 81, drop: float = 30.0):
        self.log_density = log_density
        self.frame = frame
        self.cfg = cfg
        nd = len(frame.dirs)
        self.log_peak = float(np.max(log_density(frame.points(np.zeros(nd)))))
        r_max = 1.0
        while np.max(log_density(frame.points(np.full(nd, r_max)))) > self.log_peak - drop:
            r_max *= 2.0
            if r_max > 1e12:
                raise BracketError("density does not decay along some ray")
        self.s_max = float(np.log1p(r_max))
        # heavy tails stretch the grid; keep the spacing at or below 0.04
        n_s = max(n_s, int(np.ceil(self.s_max / 0.04)) + 1)
        s = np.linspace(0.0, self.s_max, n_s)
        r = np.expm1(s)
        lp = log_density(frame.points(np.repeat(r[:, None], nd, axis=1)))  # (n_s, nd)
        integrand = np.exp(lp) * (r ** (frame.dim - 1) * (1.0 + r))[:, None]
        self.s = s
        self.h = s[1] - s[0]
        self.logf_tab = lp
        self.spl_log = CubicSpline(s, lp, axis=0)
        self.spl_cum = CubicSpline(s, integrand, axis=0).antiderivative()

    def _eval(self, ppoly, s):
        """Evaluate a per-ray piecewise polynomial at per-ray abscissae s (..., nd)."""
        s = np.clip(s, 0.0, self.s_max)
        idx = np.clip(np.floor(s / self.h).astype(int), 0, len(self.s) - 2)
        dx = s - self.s[idx]
        c = ppoly.c  # (order, n_int, nd)
        cols = np.arange(s.shape[-1])
        val = np.zeros(s.shape)
        for k in range(c.shape[0]):
            val = val * dx + c[k][idx, cols]
        return val

    def radii_s(self, log_t):
        log_t = np.atleast_1d(np.asarray(log_t, dtype=float))
        nd = len(self.frame.dirs)
        target = log_t[:, None]
        above = self.logf_tab[None, :, :] >= target[:, :, None]  # (n, n_s, nd)
        k = np.clip(above.sum(axis=1) - 1, 0, len(self.s) - 2)  # last grid index inside
        lo = self.s[k]
        hi = self.s[k + 1]
        full = np.broadcast_to(target, (len(log_t), nd))

        def fn(s):
            return self._eval(self.spl_log, s) - full

        flo, fhi = fn(lo), fn(hi)
        ok = (flo > 0) & (fhi < 0)
        s_star = np.where(above[:, 0, :], np.where(ok, 0.0, np.where(fhi >= 0, hi, lo)), 0.0)
        if ok.any():
            root = find_root_vec(fn, np.where(ok, lo, 0.0), np.where(ok, hi, 1.0),
                                 np.where(ok, flo, 1.0), np.where(ok, fhi, -1.0))
            s_star = np.where(ok, root, s_star)
        return s_star

    def radii(self, log_t):
        return np.expm1(self.radii_s(log_t))

    def mass_s(self, s_star):
        return np.sum(self._eval(self.spl_cum, s_star) * self.frame.dir_weights, axis=-1) * self.frame.jac

    def mass(self, log_t):
        return self.mass_s(self.radii_s(log_t))

    def solve(self, alpha: float) -> float:
        """log threshold of the level-alpha region."""
        a = np.atleast_1d(float(alpha))
        lo = np.array([float(np.min(self.logf_tab[-1]))])
        hi = np.array([self.log_peak])
        flo = self.mass(lo) - a
        if flo[0] <= 0:
            raise BracketError("tabulated region cannot reach the requested mass")
        return float(find_root_vec(lambda t: self.mass(t) - a, lo, hi, flo, -a)[0])

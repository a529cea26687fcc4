"""Monte Carlo coverage of Bayesian predictive regions.

Posteriors are computed by deterministic grid quadrature, so the only
Monte Carlo error is the outer replicate loop.  Each replicate draws its
own counter-based Philox stream keyed by (seed, replicate index), which
makes results independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from . import __version__
from .errors import BracketError, GridMisplaced
from .family import ParametricFamily, PriorField, quadratic_features
from .fisher import fisher_info
from .hpd import RayFrame, TabulatedRegion, hpd_residual, ray_integral
from .numerics import DEFAULT_CONFIG, NumericsConfig, find_root, gauss_legendre
from .quantile import quantile_residual

# ---------------------------------------------------------------------------
# Posterior grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Posterior grid layout.

    Nodes per dimension default to 64 for p <= 2 and 16 for p = 3.  Each
    transformed coordinate phi (log for positive parameters) is covered by
    phi_hat + width * sd * s / (1 - s^2) at Gauss-Legendre nodes s, sd being
    the asymptotic posterior standard deviation.
    """

    nodes_per_dim: int | None = None
    width: float = 2.0
    prune: float = 1e-14
    max_retries: int = 3

    def nodes_for(self, p: int) -> int:
        if self.nodes_per_dim is not None:
            return self.nodes_per_dim
        return 64 if p <= 2 else 16


@dataclass
class PosteriorGrid:
    thetas: np.ndarray
    weights: np.ndarray
    log_post: np.ndarray
    loglik: np.ndarray
    digest: str
    tail_mass: float = 0.0
    n_data: int = 0
    width: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise GridMisplaced("posterior weights are not a finite probability vector")

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.thetas

    @classmethod
    def point_mass(cls, theta) -> "PosteriorGrid":
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        return cls(th, np.ones(1), np.zeros(1), np.zeros(1), "point-mass")

    @classmethod
    def from_nodes(cls, thetas, weights) -> "PosteriorGrid":
        th = np.atleast_2d(np.asarray(thetas, dtype=float))
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        return cls(th, w, np.log(w), np.zeros(len(w)), "explicit")


def data_digest(data) -> str:
    return hashlib.sha256(np.ascontiguousarray(np.asarray(data, dtype=float)).tobytes()).hexdigest()[:16]


def _axis_rule(n: int):
    if n == 1:
        return np.zeros(1), np.ones(1)
    s, w = gauss_legendre(n, -1.0, 1.0)
    u = s / (1 - s * s)
    du = (1 + s * s) / (1 - s * s) ** 2
    return u, w * du


def log_likelihood(fam: ParametricFamily, data, thetas, chunk: int = 4096) -> np.ndarray:
    """Sum over observations of log f(x_i; theta_k) for every grid node k."""
    x = np.asarray(data, dtype=float)
    x = x[:, None] if fam.obs_dim == 1 else x[:, None, :]
    out = np.empty(len(thetas))
    for i in range(0, len(thetas), chunk):
        th = thetas[None, i:i + chunk]
        out[i:i + chunk] = fam.log_density(x, th).sum(axis=0)
    return out


def posterior_grid(fam: ParametricFamily, data, prior: PriorField, spec: GridSpec = GridSpec(),
                   cfg: NumericsConfig = DEFAULT_CONFIG) -> PosteriorGrid:
    """Posterior on a tensor grid centred at the family estimator.

    Raises :class:`GridMisplaced` if every weight underflows or the mode
    sits on the outermost layer of the grid.
    """
    data = np.asarray(data, dtype=float)
    n = len(data)
    p = fam.param_dim
    theta_hat = np.asarray(fam.estimate(data), dtype=float)
    try:
        theta_hat = fam.check_theta(theta_hat)
    except Exception as exc:
        raise GridMisplaced(f"estimator left the parameter domain: {exc}") from None
    transforms = fam.param_transforms or ("identity",) * p
    is_log = np.array([t == "log" for t in transforms])
    info = fisher_info(fam, theta_hat, cfg)
    jac = np.where(is_log, 1.0 / np.where(is_log, theta_hat, 1.0), 1.0)
    sd = np.sqrt(np.diag(info.g_inv) / max(n, 1)) * jac
    phi_hat = np.where(is_log, np.log(np.where(is_log, theta_hat, 1.0)), theta_hat)

    k = spec.nodes_for(p)
    u, wu = _axis_rule(k)
    axes = [phi_hat[i] + spec.width * sd[i] * u for i in range(p)]
    waxes = [spec.width * sd[i] * wu for i in range(p)]
    phi = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    logw = np.sum(np.log(np.stack(np.meshgrid(*waxes, indexing="ij"), axis=-1).reshape(-1, p)), axis=1)
    logjac = np.sum(np.where(is_log, phi, 0.0), axis=1)

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        thetas = np.where(is_log, np.exp(phi), phi)
        ll = log_likelihood(fam, data, thetas)
        lp = ll + np.asarray(prior(thetas), dtype=float) + logjac + logw
    # nodes outside the domain give non-finite log densities and drop out here
    lp = np.where(np.isfinite(lp), lp, -np.inf)
    if not np.any(np.isfinite(lp)):
        raise GridMisplaced("all posterior weights underflow")
    w = np.exp(lp - lp.max())
    w /= w.sum()
    if k > 2:
        idx = np.stack(np.unravel_index(np.arange(len(w)), (k,) * p), axis=-1)
        edge = np.any((idx == 0) | (idx == k - 1), axis=1)
        tail = float(w[edge].sum())
        if int(np.argmax(w)) in set(np.flatnonzero(edge)):
            raise GridMisplaced("posterior mode on the grid boundary")
    else:
        tail = 0.0
    keep = w >= spec.prune * w.max()
    w = w[keep] / w[keep].sum()
    return PosteriorGrid(thetas[keep], w, lp[keep], ll[keep], data_digest(data), tail, n, spec.width)


def posterior_grid_retry(fam, data, prior, spec: GridSpec, cfg):
    """posterior_grid with up to ``spec.max_retries`` widenings; returns (grid, retries)."""
    width = spec.width
    for attempt in range(spec.max_retries + 1):
        try:
            s = GridSpec(spec.nodes_per_dim, width, spec.prune, spec.max_retries)
            return posterior_grid(fam, data, prior, s, cfg), attempt
        except GridMisplaced:
            if attempt == spec.max_retries:
                raise
            width *= 2.0
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Predictive regions
# ---------------------------------------------------------------------------


def predictive_tail(pg: PosteriorGrid, fam: ParametricFamily, q) -> float:
    return float(pg.weights @ fam.survival(q, pg.thetas))


def predictive_quantile(pg: PosteriorGrid, fam: ParametricFamily, alpha: float,
                        cfg: NumericsConfig = DEFAULT_CONFIG) -> float:
    """Root of sum_k w_k (1 - F(q; theta_k)) = alpha."""
    if fam.obs_dim != 1:
        raise ValueError("predictive quantiles need univariate observations")
    c, s = (float(v) for v in fam.window(pg.mean))

    def fn(q):
        return predictive_tail(pg, fam, q) - alpha

    lo, hi = c - s, c + s
    width = s
    for _ in range(200):
        if fn(lo) >= 0 and fn(hi) <= 0:
            break
        width *= 2
        if fn(lo) < 0:
            lo = c - width
        if fn(hi) > 0:
            hi = c + width
    else:
        raise BracketError("predictive quantile not bracketed")
    return find_root(fn, (lo, hi), tol=cfg.root_tol)


def mixture_log_density(fam: ParametricFamily, pg: PosteriorGrid, chunk: int = 1 << 21):
    """log sum_k w_k f(x; theta_k) as a function of an array of points."""
    logw = np.log(pg.weights)
    th = pg.thetas
    if fam.quadratic_form is not None:
        coef = fam.quadratic_form(th)  # (K, 6)
        coef[:, 0] += logw

        def logf_quad(x):
            x = np.asarray(x, dtype=float)
            flat = x.reshape(-1, 2)
            out = np.empty(len(flat))
            step = max(1, chunk // len(th))
            for i in range(0, len(flat), step):
                a = quadratic_features(flat[i:i + step]) @ coef.T
                top = a.max(axis=1)
                out[i:i + step] = top + np.log(np.exp(a - top[:, None]).sum(axis=1))
            return out.reshape(x.shape[:-1])

        return logf_quad

    def logf(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape if fam.obs_dim == 1 else x.shape[:-1]
        flat = x.reshape(-1) if fam.obs_dim == 1 else x.reshape(-1, fam.obs_dim)
        out = np.empty(len(flat))
        step = max(1, chunk // len(th))
        for i in range(0, len(flat), step):
            xi = flat[i:i + step, None] if fam.obs_dim == 1 else flat[i:i + step, None, :]
            out[i:i + step] = logsumexp(fam.log_density(xi, th[None]) + logw, axis=1)
        return out.reshape(shape)

    return logf


def _mixture_mode(fam, pg, logf):
    start = np.atleast_1d(np.asarray(fam.mode_point(pg.mean), dtype=float))
    if len(pg.weights) == 1:
        return start
    res = optimize.minimize(lambda z: -float(logf(z if fam.obs_dim == 2 else z[0])), start,
                            method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    return np.atleast_1d(res.x)


@dataclass
class PredictiveRegion:
    log_m: float
    frame: RayFrame
    radii: np.ndarray
    logf: object
    mass_check: float

    @property
    def m(self) -> float:
        return math.exp(self.log_m)

    def contains(self, x):
        return self.logf(x) >= self.log_m

    def integrate(self, fn, cfg: NumericsConfig = DEFAULT_CONFIG):
        return float(ray_integral(self.frame, self.radii[None], fn, cfg)[0])


def predictive_hpd_region(pg: PosteriorGrid, fam: ParametricFamily, alpha: float,
                          cfg: NumericsConfig = DEFAULT_CONFIG, check: bool = False,
                          n_s: int = 81) -> PredictiveRegion:
    logf = mixture_log_density(fam, pg)
    center = _mixture_mode(fam, pg, logf)
    _, scale = fam.window(pg.mean)
    frame = RayFrame.build(center, scale, fam.obs_dim, cfg)
    region = TabulatedRegion(logf, frame, cfg, n_s=n_s)
    log_m = region.solve(alpha)
    radii = region.radii(np.array([log_m]))[0]
    mass = float("nan")
    if check:
        mass = float(ray_integral(frame, radii[None], lambda x: np.exp(logf(x)), cfg)[0])
    return PredictiveRegion(log_m, frame, radii, logf, mass)


def predictive_hpd_threshold(pg: PosteriorGrid, fam: ParametricFamily, alpha: float,
                             cfg: NumericsConfig = DEFAULT_CONFIG) -> float:
    """Density threshold of the level-alpha highest predictive density region."""
    return predictive_hpd_region(pg, fam, alpha, cfg).m


# ---------------------------------------------------------------------------
# Coverage simulation
# ---------------------------------------------------------------------------


@dataclass
class CoverageReport:
    """Monte Carlo coverage of a predictive region with expansion check.

    ``coverage_hat`` is the Rao-Blackwellised estimate (exact conditional
    coverage at the true theta0 averaged over replicates); the binary
    indicator estimate is kept as a cross-check.  ``defect_hat`` is
    n (alpha - coverage_hat), to be compared with the predicted first-order
    defect epsilon(theta0, alpha).
    """

    family: str
    prior: str
    kind: str
    theta0: list
    n: int
    alpha: float
    replicates: int
    coverage_hat: float
    se: float
    coverage_binary: float
    se_binary: float
    defect_hat: float
    defect_se: float
    predicted_defect: float | None
    z_score: float | None
    rb_binary_z: float
    seed: int
    config_hash: str
    retries: int
    failed: int
    ok: bool = True
    messages: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=float)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(index)))


def _quantile_replicate(fam, prior, theta0, n, alphas, spec, cfg, seed, r):
    rng = replicate_rng(seed, r)
    data = fam.sample(theta0, rng, n)
    x_new = fam.sample(theta0, rng, 1)[0]
    pg, retries = posterior_grid_retry(fam, data, prior, spec, cfg)
    rb, hit = [], []
    for a in alphas:
        q = predictive_quantile(pg, fam, a, cfg)
        rb.append(float(fam.survival(q, theta0)))
        hit.append(float(x_new > q))
    return np.array(rb), np.array(hit), retries


def _hpd_replicate(fam, prior, theta0, n, alphas, spec, cfg, seed, r):
    rng = replicate_rng(seed, r)
    data = fam.sample(theta0, rng, n)
    x_new = fam.sample(theta0, rng, 1)[0]
    pg, retries = posterior_grid_retry(fam, data, prior, spec, cfg)
    rb, hit = [], []
    for a in alphas:
        reg = predictive_hpd_region(pg, fam, a, cfg)
        rb.append(reg.integrate(lambda x: fam.density(x, theta0), cfg))
        hit.append(float(reg.contains(x_new)))
    return np.array(rb), np.array(hit), retries


def _run(kind, fam, prior, theta0, n, alphas, R, seed, cfg, spec, workers, predicted):
    if R < 100:
        raise ValueError("coverage simulation needs at least 100 replicates")
    if n < 1:
        raise ValueError("sample size must be positive")
    theta0 = fam.check_theta(theta0)
    alphas = [float(a) for a in np.atleast_1d(alphas)]
    one = _quantile_replicate if kind == "quantile" else _hpd_replicate

    def task(r):
        try:
            return one(fam, prior, theta0, n, alphas, spec, cfg, seed, r)
        except GridMisplaced:
            return None

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(task, range(R)))
    else:
        results = [task(r) for r in range(R)]

    good = [res for res in results if res is not None]
    failed = R - len(good)
    retries = sum(res[2] for res in good)
    messages = []
    ok = True
    if retries + failed > 0.01 * R:
        ok = False
        messages.append(f"{retries} grid retries and {failed} failed replicates exceed 1% of {R}")
    rb = np.array([res[0] for res in good])
    hit = np.array([res[1] for res in good])
    m = len(good)
    if predicted is None:
        resid = quantile_residual if kind == "quantile" else hpd_residual
        predicted = [float(resid(fam, prior, theta0, a, cfg)) for a in alphas]
    predicted = list(np.broadcast_to(np.asarray(predicted, dtype=float), (len(alphas),)))
    reports = []
    for j, a in enumerate(alphas):
        c, cb = float(np.mean(rb[:, j])), float(np.mean(hit[:, j]))
        se = float(np.std(rb[:, j], ddof=1) / math.sqrt(m))
        seb = float(np.std(hit[:, j], ddof=1) / math.sqrt(m))
        d, dse = n * (a - c), n * se
        pred = float(predicted[j])
        z = (d - pred) / dse if dse > 0 else float("inf")
        # the two estimators share replicates; their difference has variance
        # at most the binary variance minus the Rao-Blackwell variance
        diff_sd = math.sqrt(max(seb**2 - se**2, 1e-300))
        reports.append(CoverageReport(
            fam.name, prior.name, kind, theta0.tolist(), int(n), a, int(R), c, se, cb, seb, d, dse,
            pred, z, (cb - c) / diff_sd, int(seed), cfg.config_hash(), int(retries), int(failed), ok,
            list(messages)))
    return reports


def coverage_mc(fam: ParametricFamily, prior: PriorField, theta0, n: int, alpha, R: int, seed: int,
                cfg: NumericsConfig = DEFAULT_CONFIG, spec: GridSpec = GridSpec(),
                workers: int | None = None, predicted=None):
    """Coverage of the predictive upper alpha quantile under ``prior``.

    Returns one :class:`CoverageReport` for scalar ``alpha`` and a list for
    a sequence (the replicates are shared across levels).
    """
    reps = _run("quantile", fam, prior, theta0, n, alpha, R, seed, cfg, spec, workers, predicted)
    return reps[0] if np.ndim(alpha) == 0 else reps


def coverage_mc_hpd(fam: ParametricFamily, prior: PriorField, theta0, n: int, alpha, R: int, seed: int,
                    cfg: NumericsConfig = DEFAULT_CONFIG, spec: GridSpec = GridSpec(),
                    workers: int | None = None, predicted=None):
    """Coverage of the level-alpha highest predictive density region."""
    reps = _run("hpd", fam, prior, theta0, n, alpha, R, seed, cfg, spec, workers, predicted)
    return reps[0] if np.ndim(alpha) == 0 else reps


def student_t_predictive_quantile(data, alpha: float) -> float:
    """Closed-form predictive upper quantile of a normal sample under pi = 1/sigma."""
    from scipy import stats

    x = np.asarray(data, dtype=float)
    n = len(x)
    return float(x.mean() + x.std(ddof=1) * math.sqrt(1 + 1 / n) * stats.t.ppf(1 - alpha, n - 1))


def summarize(reports: Sequence[CoverageReport]) -> str:
    lines = []
    for r in reports:
        z = "nan" if r.z_score is None else f"{r.z_score:+.2f}"
        lines.append(f"{r.family} {r.prior} alpha={r.alpha:g} n={r.n} R={r.replicates}: "
                     f"coverage={r.coverage_hat:.4f}+/-{r.se:.4f} defect={r.defect_hat:+.4f}"
                     f" predicted={r.predicted_defect:+.4f} z={z}")
    return "\n".join(lines)

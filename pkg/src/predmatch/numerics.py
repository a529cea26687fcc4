"""Deterministic numerical kernels shared by every other module.

Quadrature rules, the alpha grid on (0, 1), scalar and vectorised root
finding, central finite differences and small dense linear algebra.
Everything here is pure: no global state, fixed node placement, so results
are bit-reproducible for a given :class:`NumericsConfig`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import BracketError, QuadratureError, SingularMatrixError

EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class NumericsConfig:
    """Tolerances and node counts used throughout the toolkit.

    Attributes
    ----------
    quad_tol : float
        Absolute tolerance of the adaptive rule in :func:`integrate_1d`.
    x_panels, x_order : int
        Composite Gauss-Legendre rule (panels x order nodes) used for the
        fixed, vectorised observation-space integrals.
    alpha_nodes : int
        Number K of alpha-grid nodes on (0, 1).
    fd_step_theta : float
        Relative step for first-order central differences in theta.
    fd_step_nested : float
        Relative step for differences of quantities that are themselves
        finite differences (curl tests, the HPD gradient formula).
    alpha_fd_step : float
        Relative step (to ``min(alpha, 1 - alpha)``) for alpha derivatives.
    root_tol : float
        Tolerance, in probability, on quantile equations.
    hpd_bisect_tol : float
        Tolerance on HPD region mass.
    alpha_min : float
        Endpoint clip for residual sweeps: alpha in [alpha_min, 1 - alpha_min].
    n_angles, n_radial : int
        Ray count and radial Gauss-Legendre order for 2-D level-set regions.
    independence_threshold : float
        min-eigenvalue / trace ratio below which b is declared singular.
    separability_tol : float
        Singular-value ratio below which a matrix counts as rank one.
    curl_tol : float
        Max |curl| accepted by the gradient-field test.
    path_tol : float
        Max path dependence accepted when reconstructing a log prior.
    path_nodes : int
        Gauss-Legendre nodes per straight segment of a line integral.
    cond_max : float
        Condition number above which inversion is refused.
    """

    quad_tol: float = 1e-10
    x_panels: int = 8
    x_order: int = 24
    alpha_nodes: int = 64
    fd_step_theta: float = EPS ** (1.0 / 3.0)
    fd_step_nested: float = 1e-4
    alpha_fd_step: float = 1e-3
    root_tol: float = 1e-12
    hpd_bisect_tol: float = 1e-9
    alpha_min: float = 1e-3
    n_angles: int = 64
    n_radial: int = 40
    independence_threshold: float = 1e-6
    separability_tol: float = 1e-6
    curl_tol: float = 1e-5
    path_tol: float = 1e-6
    path_nodes: int = 16
    cond_max: float = 1e12

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {v!r}")
        if self.alpha_nodes < 8:
            raise ValueError("alpha_nodes must be >= 8")
        if self.alpha_min >= 0.5:
            raise ValueError("alpha_min must be < 0.5")

    def replace(self, **changes) -> "NumericsConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NumericsConfig":
        names = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise ValueError(f"unknown numerics settings: {sorted(unknown)}")
        kw = {}
        for k, v in data.items():
            default = getattr(cls, k)
            kw[k] = int(v) if isinstance(default, int) else float(v)
        return cls(**kw)

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())


DEFAULT_CONFIG = NumericsConfig()


def stable_hash(obj) -> str:
    """Short sha256 digest of a JSON-serialisable object."""
    text = json.dumps(obj, sort_keys=True, default=_json_default, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# Gauss-Legendre rules
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@lru_cache(maxsize=None)
def _composite(a: float, b: float, panels: int, order: int):
    edges = np.linspace(a, b, panels + 1)
    x, w = _leggauss(order)
    half = 0.5 * np.diff(edges)[:, None]
    nodes = (edges[:-1, None] + half * (x + 1.0)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


@lru_cache(maxsize=None)
def standard_rule(kind: str, panels: int, order: int):
    """Fixed composite Gauss-Legendre rule in a standard coordinate.

    ``kind`` selects the domain: ``"line"`` is the whole real line mapped by
    x = s / (1 - s^2), ``"half"`` is [0, inf) mapped by x = s / (1 - s) and
    ``"unit"`` is [0, 1].  Returned nodes t and weights v satisfy
    sum(v * h(t)) ~ integral of h.  A physical window is applied affinely
    (x = c + w t), which keeps results smooth in c and w.
    """
    if kind == "line":
        s, ws = _composite(-1.0, 1.0, panels, order)
        t = s / (1.0 - s * s)
        v = ws * (1.0 + s * s) / (1.0 - s * s) ** 2
    elif kind == "half":
        s, ws = _composite(0.0, 1.0, panels, order)
        t = s / (1.0 - s)
        v = ws / (1.0 - s) ** 2
    elif kind == "unit":
        t, v = _composite(0.0, 1.0, panels, order)
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    t = np.array(t)
    v = np.array(v)
    t.flags.writeable = False
    v.flags.writeable = False
    return t, v


def window_rule(lower, upper, center, scale, cfg: NumericsConfig = DEFAULT_CONFIG):
    """Quadrature nodes/weights for an integral over (lower, upper).

    Infinite ends use the algebraic maps of :func:`standard_rule` with the
    given centre/scale; ``lower`` may be an array (e.g. one tail start per
    alpha), in which case nodes have shape ``lower.shape + (N,)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    center = np.asarray(center, dtype=float)
    scale = np.asarray(scale, dtype=float)
    lo_inf = np.all(np.isneginf(lower))
    hi_inf = np.all(np.isposinf(upper))
    if lo_inf and hi_inf:
        t, v = standard_rule("line", cfg.x_panels, cfg.x_order)
        return center[..., None] + scale[..., None] * t, scale[..., None] * v
    if hi_inf:
        t, v = standard_rule("half", cfg.x_panels, cfg.x_order)
        return lower[..., None] + scale[..., None] * t, scale[..., None] * v
    if lo_inf:
        t, v = standard_rule("half", cfg.x_panels, cfg.x_order)
        return upper[..., None] - scale[..., None] * t, scale[..., None] * v
    t, v = standard_rule("unit", cfg.x_panels, cfg.x_order)
    width = (upper - lower)[..., None]
    return lower[..., None] + width * t, width * v


@dataclass(frozen=True)
class AlphaGrid:
    """Quadrature nodes and weights for integrals over 0 < alpha < 1."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a, w = self.nodes, self.weights
        if a.ndim != 1 or a.shape != w.shape:
            raise ValueError("nodes and weights must be matching 1-D arrays")
        if np.any(a <= 0) or np.any(a >= 1) or np.any(np.diff(a) <= 0):
            raise ValueError("alpha nodes must be strictly increasing inside (0, 1)")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("alpha weights must sum to 1")

    def __len__(self):
        return len(self.nodes)

    def integrate(self, values, axis=-1):
        return np.tensordot(np.moveaxis(np.asarray(values), axis, -1), self.weights, axes=1)


@lru_cache(maxsize=None)
def alpha_grid(k: int = 64) -> AlphaGrid:
    """Gauss-Legendre grid on (0, 1) with endpoint clustering.

    The unit interval is reached through the quintic smoothstep
    alpha = s^3 (10 - 15 s + 6 s^2), whose derivative 30 s^2 (1-s)^2 is a
    polynomial, so the weights still sum to one exactly while the
    logarithmic endpoint behaviour of quantile-based integrands is damped.
    """
    if k < 8:
        raise ValueError("alpha grid needs at least 8 nodes")
    s, ws = gauss_legendre(k, 0.0, 1.0)
    a = s**3 * (10.0 - 15.0 * s + 6.0 * s * s)
    w = ws * 30.0 * s * s * (1.0 - s) ** 2
    w = w / w.sum()
    return AlphaGrid(a, w)


def clipped_alphas(alphas, cfg: NumericsConfig = DEFAULT_CONFIG):
    """The levels inside [alpha_min, 1 - alpha_min]; the endpoints' regions degenerate."""
    a = np.asarray(alphas, dtype=float)
    return a[(a >= cfg.alpha_min) & (a <= 1.0 - cfg.alpha_min)]


# ---------------------------------------------------------------------------
# Adaptive 1-D integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    n_eval: int

    def __float__(self):
        return float(self.value)


def integrate_1d(fn: Callable, a: float, b: float, cfg: NumericsConfig = DEFAULT_CONFIG,
                 center: float = 0.0, scale: float = 1.0, max_panels: int = 2000) -> QuadResult:
    """Adaptive composite Gauss-Legendre integral of ``fn`` over (a, b).

    ``fn`` is called on arrays of nodes.  Each panel is integrated with
    10- and 20-point rules; the difference is the panel error estimate and
    the worst panel is bisected until the total estimate is below
    ``cfg.quad_tol``.  Infinite limits are removed with the same algebraic
    maps as :func:`standard_rule` (centre/scale as given).
    """
    if not a < b:
        raise ValueError("integration needs a < b")
    a_inf, b_inf = np.isneginf(a), np.isposinf(b)

    if a_inf and b_inf:
        lo, hi = -1.0, 1.0

        def g(s):
            return fn(center + scale * s / (1 - s * s)) * scale * (1 + s * s) / (1 - s * s) ** 2
    elif b_inf:
        lo, hi = 0.0, 1.0

        def g(s):
            return fn(a + scale * s / (1 - s)) * scale / (1 - s) ** 2
    elif a_inf:
        lo, hi = 0.0, 1.0

        def g(s):
            return fn(b - scale * s / (1 - s)) * scale / (1 - s) ** 2
    else:
        lo, hi = float(a), float(b)
        g = fn

    n_eval = 0

    def panel(p, q):
        nonlocal n_eval
        x10, w10 = gauss_legendre(10, p, q)
        x20, w20 = gauss_legendre(20, p, q)
        y10 = np.broadcast_to(np.asarray(g(x10), dtype=float), x10.shape)
        y20 = np.broadcast_to(np.asarray(g(x20), dtype=float), x20.shape)
        n_eval += 30
        if not (np.all(np.isfinite(y10)) and np.all(np.isfinite(y20))):
            raise QuadratureError(f"non-finite integrand on panel [{p}, {q}]")
        v20 = float(w20 @ y20)
        return v20, abs(v20 - float(w10 @ y10))

    panels = [(lo, hi, *panel(lo, hi))]
    while True:
        total_err = sum(p[3] for p in panels)
        if total_err <= cfg.quad_tol or len(panels) >= max_panels:
            break
        i = max(range(len(panels)), key=lambda j: panels[j][3])
        p, q, _, _ = panels.pop(i)
        mid = 0.5 * (p + q)
        panels.append((p, mid, *panel(p, mid)))
        panels.append((mid, q, *panel(mid, q)))
    panels.sort()
    value = float(sum(p[2] for p in panels))
    return QuadResult(value, float(sum(p[3] for p in panels)), n_eval)


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------


def find_root(fn: Callable[[float], float], bracket, tol: float = 1e-12, maxiter: int = 200) -> float:
    """Root of a scalar function on a sign-changing bracket.

    Brent's method does the work; if its answer does not satisfy
    |fn(x)| <= tol, bisection continues on the bracket until it does or the
    bracket collapses to adjacent floats.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if lo > hi:
        lo, hi = hi, lo
    flo, fhi = fn(lo), fn(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise BracketError("function not finite at bracket ends")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise BracketError(f"bracket [{lo}, {hi}] does not straddle a sign change")
    x = optimize.brentq(fn, lo, hi, xtol=1e-300, rtol=4 * EPS, maxiter=maxiter)
    fx = fn(x)
    if abs(fx) <= tol:
        return x
    # bisection fallback
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = fn(mid)
        if abs(fm) <= tol or fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return lo if abs(flo) < abs(fhi) else hi


def find_root_vec(fn: Callable[[np.ndarray], np.ndarray], lo, hi, flo=None, fhi=None,
                  xtol: float = 0.0, maxiter: int = 200) -> np.ndarray:
    """Elementwise roots of a vectorised function (Illinois regula falsi).

    ``fn`` maps an array of abscissae with the shape of ``lo`` to values of
    the same shape; entry i only depends on x[i].  Each bracket must change
    sign.  Iterates until every bracket has collapsed to ``xtol`` (plus a few
    ulps) or the function vanishes; a bisection step replaces the secant
    step whenever a bracket fails to halve.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    fa = fn(a) if flo is None else np.array(flo, dtype=float)
    fb = fn(b) if fhi is None else np.array(fhi, dtype=float)
    if np.any(fa * fb > 0) or not (np.all(np.isfinite(fa)) and np.all(np.isfinite(fb))):
        raise BracketError("vector bracket does not straddle a sign change")
    side = np.zeros(a.shape, dtype=int)
    prev_width = np.abs(b - a)
    done = (fa == 0) | (fb == 0)
    for it in range(maxiter):
        width = np.abs(b - a)
        tol = xtol + 4 * EPS * np.maximum(np.abs(a), np.abs(b))
        done |= width <= tol
        if np.all(done):
            break
        denom = fb - fa
        with np.errstate(divide="ignore", invalid="ignore"):
            x = b - fb * (b - a) / denom
        bad = ~np.isfinite(x) | (x <= np.minimum(a, b)) | (x >= np.maximum(a, b))
        bisect = bad | (width > 0.5 * prev_width) & (it % 3 == 2)
        x = np.where(bisect, 0.5 * (a + b), x)
        prev_width = np.where(it % 3 == 2, width, prev_width)
        fx = fn(x)
        active = ~done
        same = (np.sign(fx) == np.sign(fb)) & active
        other = (~same) & active
        # Illinois: halve the retained end's value if it was retained last time too
        fa = np.where(same & (side == 1), 0.5 * fa, fa)
        fb_new = np.where(other & (side == -1), 0.5 * fb, fb)
        a = np.where(other, b, a)
        fa = np.where(other, fb, fa)
        fb = np.where(active, fx, fb_new)
        b = np.where(active, x, b)
        side = np.where(same, 1, np.where(other, -1, side))
        done |= (fx == 0) & active
    # fa may carry an Illinois scaling, so only prefer a when it is an exact root
    return np.where(fa == 0, a, b)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def fd_steps(theta, rel_step: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return rel_step * np.maximum(1.0, np.abs(theta))


def fd_gradient(fn: Callable, theta, cfg: NumericsConfig = DEFAULT_CONFIG, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function of theta."""
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta, cfg.fd_step_theta if step is None else step)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h[i]
        grad[i] = (fn(theta + e) - fn(theta - e)) / (2 * h[i])
    return grad


def fd_jacobian(field: Callable, theta, cfg: NumericsConfig = DEFAULT_CONFIG, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian J[r, s] = d v_r / d theta_s of a vector field."""
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta, cfg.fd_step_theta if step is None else step)
    cols = []
    for s in range(theta.size):
        e = np.zeros(theta.size)
        e[s] = h[s]
        cols.append((np.asarray(field(theta + e), float) - np.asarray(field(theta - e), float)) / (2 * h[s]))
    return np.stack(cols, axis=-1)


def stencil(theta, h):
    """Central stencil points: theta, then theta +/- h_s e_s for each s."""
    theta = np.asarray(theta, dtype=float)
    pts = [theta]
    for s in range(theta.size):
        e = np.zeros(theta.size)
        e[s] = h[s]
        pts.extend([theta + e, theta - e])
    return pts


# ---------------------------------------------------------------------------
# Small dense linear algebra
# ---------------------------------------------------------------------------


def eigenvalues(a) -> np.ndarray:
    """Ascending eigenvalues of a small symmetric matrix."""
    a = np.asarray(a, dtype=float)
    return np.linalg.eigvalsh(0.5 * (a + a.T))


def determinant(a) -> float:
    return float(np.linalg.det(np.asarray(a, dtype=float)))


def matrix_inverse(a, cond_max: float = 1e12) -> np.ndarray:
    """Inverse of a small symmetric matrix; refuses ill-conditioned input."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix_inverse needs a square matrix")
    ev = np.abs(eigenvalues(a))
    if ev.min() == 0 or ev.max() / ev.min() > cond_max:
        cond = np.inf if ev.min() == 0 else ev.max() / ev.min()
        raise SingularMatrixError(f"condition number {cond:.3g} exceeds {cond_max:.3g}")
    inv = np.linalg.inv(a)
    return 0.5 * (inv + inv.T)


# ---------------------------------------------------------------------------
# Ray geometry for star-shaped regions
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def ray_directions(dim: int, n_angles: int):
    """Unit directions and angular weights covering the sphere in R^dim.

    dim=1 gives the two half-lines; dim=2 uses the periodic trapezoid rule,
    which converges geometrically for smooth boundaries.
    """
    if dim == 1:
        d = np.array([[-1.0], [1.0]])
        w = np.array([1.0, 1.0])
    elif dim == 2:
        phi = (np.arange(n_angles) + 0.5) * (2 * np.pi / n_angles)
        d = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        w = np.full(n_angles, 2 * np.pi / n_angles)
    else:
        raise ValueError("only 1-D and 2-D observations are supported")
    d.flags.writeable = False
    w.flags.writeable = False
    return d, w

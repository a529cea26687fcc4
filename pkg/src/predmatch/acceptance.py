"""One-shot acceptance runner.

Each criterion is a function returning a :class:`CriterionResult` made of
named measurements compared against bounds.  :func:`verify_all` runs them
in order and produces a deterministic manifest (no timings, no host data),
so two runs with the same seed give identical bytes.  Failures, including
exceptions inside a criterion, are recorded rather than raised.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .coverage import coverage_mc, coverage_mc_hpd
from .errors import LinearlyDependentXi
from .family import bvn_upmp_prior, builtin_family, exp_linear_prior, power_prior, univariate_builtins
from .fisher import fisher_info, fisher_via_alpha
from .hpd import b_matrix, hpd_residual, hpd_solution, hpd_upmp_gradient
from .numerics import DEFAULT_CONFIG, NumericsConfig
from .quantile import (DEFAULT_ALPHAS, gradient_field_test, h_field, path_integrals, quantile_residual,
                       reconstructed_prior, upmp_gradient)
from .report import dumps

MANIFEST_SCHEMA = "predmatch.acceptance/1"
DEFAULT_SEED = 12345

DEFAULT_TOLERANCES = {
    "c1.fisher_rel": 1e-4,
    "c1.threshold_rel": 1e-4,
    "c1.xi3_abs": 1e-6,
    "c1.xi_ratio": 1e-4,
    "c2.upmp_residual": 1e-4,
    "c2.control_min": 1e-2,
    "c3.right_haar_max": 1e-5,
    "c3.jeffreys_min": 1e-2,
    "c4.gradient": 1e-4,
    "c4.path": 1e-6,
    "c4.residual": 1e-4,
    "c5.h_norm": 1e-8,
    "c5.gradient": 1e-6,
    "c6.fisher_rel": 1e-3,
    "c7.dependent_max": 1e-6,
    "c7.independent_min": 1e-3,
    "c7.gradient": 1e-3,
    "c8.residual": 1e-4,
    "c9.z": 3.0,
    "c10.z": 3.0,
}

BVN_THETAS = ((1.0, 1.0, 0.0), (1.0, 2.0, 0.3), (0.5, 1.5, -0.4))
ALPHAS_9 = tuple(round(0.1 * k, 1) for k in range(1, 10))
LS_THETAS = ((0.0, 1.0), (1.0, 2.0), (-0.5, 0.5))
MV_THETAS = ((0.0, 0.0), (1.0, -0.5), (-2.0, 1.5))


@dataclass
class Measurement:
    """One measured quantity against a bound: ``value <= bound`` or ``value >= bound``."""

    name: str
    value: float
    bound: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value <= self.bound if self.relation == "<=" else self.value >= self.bound

    def to_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "bound": float(self.bound),
                "relation": self.relation, "passed": self.passed}


@dataclass
class CriterionResult:
    number: int
    title: str
    measurements: list = field(default_factory=list)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.measurements) and all(m.passed for m in self.measurements)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        worst = [m for m in self.measurements if not m.passed]
        info = ""
        if self.error:
            info = f" error: {self.error}"
        elif worst:
            m = worst[0]
            info = f" ({m.name}={m.value:.3e}, needs {m.relation} {m.bound:.1e})"
        return f"[{verdict}] criterion {self.number:2d}: {self.title}{info}"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed, "error": self.error,
                "measurements": [m.to_dict() for m in self.measurements]}


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1(tol, cfg, seed, workers):
    """Bivariate normal: Fisher matrix, HPD threshold and xi against closed forms."""
    fam = builtin_family("bvn-cholesky")
    R = fam.oracles["R"]
    alphas = np.array(ALPHAS_9)
    g_err = m_err = xi3 = ratio = 0.0
    for th in BVN_THETAS:
        g_err = max(g_err, _rel(fisher_info(fam, th, cfg).g, fam.oracles["fisher"](th)))
        sol, xi = hpd_solution(fam, th, alphas, cfg)
        m_ref = fam.oracles["hpd_threshold"](th, alphas)
        m_err = max(m_err, float(np.max(np.abs(sol.m / m_ref - 1))))
        xi3 = max(xi3, float(np.max(np.abs(xi[:, 2]))))
        r = R(alphas)
        ratio = max(ratio, float(np.max(np.abs(xi[:, 0] * th[0] / r - 1))),
                    float(np.max(np.abs(xi[:, 1] * th[1] / r - 1))))
    return [Measurement("fisher_rel_err", g_err, tol["c1.fisher_rel"]),
            Measurement("threshold_rel_err", m_err, tol["c1.threshold_rel"]),
            Measurement("max_abs_xi3", xi3, tol["c1.xi3_abs"]),
            Measurement("xi_ratio_err", ratio, tol["c1.xi_ratio"])]


def bvn_matching_priors():
    """pi^J (sigma2/sigma1)^a (1 - rho^2)^(b/2) for h(x, y) = x^a y^b, y = (1 - rho^2)^(1/2)."""
    out = []
    for label, a, b in (("h=1", 0, 0), ("h=x", 1, 0), ("h=y^1/2", 0, 0.5), ("h=x*y^1/2", 1, 0.5)):
        p = bvn_upmp_prior(a, b / 2)
        out.append(type(p)(label, p.log_prior, p.log_prior_gradient))
    return out


def _hpd_sup(fam, prior, thetas, alphas, cfg):
    return max(float(np.max(np.abs(hpd_residual(fam, prior, th, alphas, cfg)))) for th in thetas)


def criterion_2(tol, cfg, seed, workers):
    """Bivariate normal matching family versus a non-matching control."""
    fam = builtin_family("bvn-cholesky")
    alphas = np.array(ALPHAS_9)
    out = [Measurement(f"sup_residual[{p.name}]", _hpd_sup(fam, p, BVN_THETAS, alphas, cfg),
                       tol["c2.upmp_residual"]) for p in bvn_matching_priors()]
    control = power_prior("theta1^-3", 3, [-3, 0, 0])
    out.append(Measurement("sup_residual[theta1^-3]", _hpd_sup(fam, control, BVN_THETAS, alphas, cfg),
                           tol["c2.control_min"], ">="))
    return out


def criterion_3(tol, cfg, seed, workers):
    """Quantile matching in location-scale models: right Haar exact, Jeffreys not."""
    alphas = np.array(DEFAULT_ALPHAS)
    out = []
    for name in ("location-scale-normal", "location-scale-t(5)", "location-scale-logistic"):
        fam = builtin_family(name)
        sups = {}
        for prior in ("right-haar", "jeffreys"):
            pr = fam.prior(prior)
            sups[prior] = max(float(np.max(np.abs(quantile_residual(fam, pr, th, alphas, cfg))))
                              for th in LS_THETAS)
        out.append(Measurement(f"sup_residual[{name},right-haar]", sups["right-haar"], tol["c3.right_haar_max"]))
        out.append(Measurement(f"sup_residual[{name},jeffreys]", sups["jeffreys"], tol["c3.jeffreys_min"], ">="))
    return out


def criterion_4(tol, cfg, seed, workers):
    """Uniformly matching prior of the normal location-scale model, end to end."""
    fam = builtin_family("location-scale-normal")

    def field_fn(th):
        return upmp_gradient(fam, th, cfg)

    grad_err = max(float(np.max(np.abs(field_fn(th) - np.array([0.0, -1.0 / th[1]])))) for th in LS_THETAS)
    curl = gradient_field_test(field_fn, LS_THETAS, cfg)
    ref = np.array([0.0, 1.0])
    path = max(path_integrals(field_fn, ref, th, cfg).path_difference for th in LS_THETAS[1:])
    prior = reconstructed_prior(field_fn, ref, cfg)
    alphas = np.array([0.1, 0.5, 0.9])
    resid = max(float(np.max(np.abs(quantile_residual(fam, prior, th, alphas, cfg)))) for th in LS_THETAS[1:])
    return [Measurement("upmp_gradient_err", grad_err, tol["c4.gradient"]),
            Measurement("max_curl", curl.max_curl, curl.tolerance),
            Measurement("path_difference", path, tol["c4.path"]),
            Measurement("reconstructed_residual", resid, tol["c4.residual"])]


def criterion_5(tol, cfg, seed, workers):
    """One-parameter models: the h field vanishes and the answer is Jeffreys."""
    grids = {"normal-location": (-2.0, -0.5, 0.0, 1.0, 3.0), "normal-mean-eq-var": (0.3, 0.7, 1.0, 2.0, 5.0)}
    out = []
    for name, grid in grids.items():
        fam = builtin_family(name)
        jp = fam.prior("jeffreys")
        h = max(float(np.linalg.norm(h_field(fam, [t], cfg))) for t in grid)
        d = max(float(np.max(np.abs(upmp_gradient(fam, [t], cfg) - jp.gradient(np.array([t]))))) for t in grid)
        out.append(Measurement(f"h_norm[{name}]", h, tol["c5.h_norm"]))
        out.append(Measurement(f"upmp_vs_jeffreys[{name}]", d, tol["c5.gradient"]))
    return out


FISHER_GRIDS = {
    1: {"normal-location": ((-2.0,), (-1.0,), (0.0,), (1.0,), (2.5,)),
        "normal-mean-eq-var": ((0.3,), (0.7,), (1.0,), (2.0,), (5.0,))},
    2: ((0.0, 1.0), (1.0, 2.0), (-0.5, 0.5), (2.0, 0.3), (-3.0, 4.0)),
}


def criterion_6(tol, cfg, seed, workers):
    """Fisher information by the score route and by the alpha route agree."""
    out = []
    for name in univariate_builtins():
        fam = builtin_family(name)
        grid = FISHER_GRIDS[1][name] if fam.param_dim == 1 else FISHER_GRIDS[2]
        err = max(_rel(fisher_via_alpha(fam, th, cfg).g, fisher_info(fam, th, cfg).g) for th in grid)
        out.append(Measurement(f"fisher_routes_rel[{name}]", err, tol["c6.fisher_rel"]))
    return out


def criterion_7(tol, cfg, seed, workers):
    """b matrix singular exactly when the xi components are dependent."""
    out = []
    for name, th in (("bvn-cholesky", (1.0, 2.0, 0.3)), ("mvlocation-spherical-2d", (0.5, -1.0))):
        out.append(Measurement(f"b_ratio[{name}]", b_matrix(builtin_family(name), th, cfg).ratio,
                               tol["c7.dependent_max"]))
    ls = builtin_family("location-scale-normal")
    th = np.array([1.0, 2.0])
    out.append(Measurement("b_ratio[location-scale-normal]", b_matrix(ls, th, cfg).ratio,
                           tol["c7.independent_min"], ">="))
    try:
        err = float(np.max(np.abs(hpd_upmp_gradient(ls, th, cfg) - np.array([0.0, -1.0 / th[1]]))))
    except LinearlyDependentXi:
        err = math.inf
    out.append(Measurement("hpd_upmp_gradient_err[location-scale-normal]", err, tol["c7.gradient"]))
    try:
        hpd_upmp_gradient(builtin_family("bvn-cholesky"), (1.0, 2.0, 0.3), cfg)
        raised = 0.0
    except LinearlyDependentXi:
        raised = 1.0
    out.append(Measurement("raises_dependent_xi[bvn-cholesky]", raised, 1.0, ">="))
    return out


def criterion_8(tol, cfg, seed, workers):
    """Spherical location model: exp(a . theta) with sum(a) = 0 is HPD matching."""
    fam = builtin_family("mvlocation-spherical-2d")
    alphas = np.array(ALPHAS_9)
    out = []
    for a in ((0.0, 0.0), (1.0, -1.0), (-2.0, 2.0)):
        pr = exp_linear_prior(f"exp({a[0]:g}*theta1+{a[1]:g}*theta2)", a)
        out.append(Measurement(f"sup_residual[{pr.name}]", _hpd_sup(fam, pr, MV_THETAS, alphas, cfg),
                               tol["c8.residual"]))
    return out


def criterion_9(tol, cfg, seed, workers, R=2000, n=10):
    """Simulated quantile coverage against the first-order expansion."""
    fam = builtin_family("location-scale-normal")
    theta0, alphas = (0.0, 1.0), [0.1, 0.5, 0.9]
    out = []
    for r in coverage_mc(fam, fam.prior("jeffreys"), theta0, n, alphas, R, seed, cfg, workers=workers):
        out.append(Measurement(f"|z|[jeffreys,alpha={r.alpha:g}]", abs(r.z_score), tol["c9.z"]))
        out.append(Measurement(f"ok[jeffreys,alpha={r.alpha:g}]", float(r.ok), 1.0, ">="))
    for r in coverage_mc(fam, fam.prior("right-haar"), theta0, n, alphas, R, seed + 1, cfg, workers=workers):
        out.append(Measurement(f"|coverage-alpha|/se[right-haar,alpha={r.alpha:g}]",
                               abs(r.coverage_hat - r.alpha) / r.se, tol["c9.z"]))
        out.append(Measurement(f"ok[right-haar,alpha={r.alpha:g}]", float(r.ok), 1.0, ">="))
    return out


def criterion_10(tol, cfg, seed, workers, R=1000, n=20):
    """Simulated HPD coverage of the bivariate normal under Jeffreys' prior."""
    fam = builtin_family("bvn-cholesky")
    r = coverage_mc_hpd(fam, fam.prior("jeffreys"), (1.0, 1.0, 0.0), n, 0.5, R, seed + 2, cfg, workers=workers,
)
    return [Measurement("|coverage-alpha|/se", abs(r.coverage_hat - r.alpha) / r.se, tol["c10.z"]),
            Measurement("ok", float(r.ok), 1.0, ">=")]


CRITERIA: dict[int, tuple[str, Callable]] = {
    1: ("bvn Fisher, threshold and xi oracles", criterion_1),
    2: ("bvn matching family and control", criterion_2),
    3: ("location-scale quantile matching", criterion_3),
    4: ("uniformly matching prior pipeline", criterion_4),
    5: ("one-parameter degeneracy", criterion_5),
    6: ("Fisher information two routes", criterion_6),
    7: ("b matrix dependence dichotomy", criterion_7),
    8: ("spherical location exp-linear family", criterion_8),
    9: ("quantile coverage simulation", criterion_9),
    10: ("HPD coverage simulation", criterion_10),
}
REPLAY_TITLE = "determinism replay"


def run_criterion(number: int, tolerances: dict, cfg: NumericsConfig, seed: int, workers) -> CriterionResult:
    title, fn = CRITERIA[number]
    res = CriterionResult(number, title)
    try:
        res.measurements = fn(tolerances, cfg, seed, workers)
    except Exception as exc:  # failures are reported, not raised
        res.error = f"{type(exc).__name__}: {exc}"
        res.measurements = []
    return res


def _manifest(results, seed, tolerances, cfg) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "seed": int(seed),
        "config_hash": cfg.config_hash(),
        "tolerances": dict(sorted(tolerances.items())),
        "criteria": [r.to_dict() for r in results],
        "all_passed": all(r.passed for r in results),
    }


@dataclass
class VerifyOutcome:
    results: list
    manifest: dict
    text: str

    @property
    def exit_code(self) -> int:
        return 0 if self.manifest["all_passed"] else 1

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def verify_all(seed: int = DEFAULT_SEED, tolerances: dict | None = None, only=None,
               cfg: NumericsConfig = DEFAULT_CONFIG, out_path=None, workers: int | None = None,
               replay: bool = True, progress: Callable | None = None) -> VerifyOutcome:
    """Run the acceptance criteria and return the manifest.

    ``only`` restricts the run to a subset of criterion numbers.  With
    ``replay`` the selected criteria are run a second time and the two
    manifests are compared byte for byte; that comparison is recorded as
    the final criterion.  ``tolerances`` overrides entries of
    :data:`DEFAULT_TOLERANCES` (unknown keys are rejected).
    """
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in (tolerances or {}).items():
        if k not in tol:
            raise KeyError(f"unknown tolerance {k!r}")
        tol[k] = float(v)
    numbers = sorted(CRITERIA) if only is None else sorted({int(k) for k in only} & set(CRITERIA))

    def one_pass(tag):
        out = []
        for k in numbers:
            r = run_criterion(k, tol, cfg, seed, workers)
            if progress is not None:
                progress(f"{tag}{r.line()}")
            out.append(r)
        return out

    results = one_pass("")
    if replay:
        first = dumps(_manifest(results, seed, tol, cfg))
        second = dumps(_manifest(one_pass("(replay) "), seed, tol, cfg))
        same = float(first == second)
        rep = CriterionResult(len(CRITERIA) + 1, REPLAY_TITLE,
                              [Measurement("identical_manifest_bytes", same, 1.0, ">=")])
        if progress is not None:
            progress(rep.line())
        results.append(rep)
    manifest = _manifest(results, seed, tol, cfg)
    text = dumps(manifest)
    if out_path is not None:
        Path(out_path).write_text(text)
    return VerifyOutcome(results, manifest, text)

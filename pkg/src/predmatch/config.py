"""Experiment configuration files (YAML).

A config names one task, a family, priors, a theta grid and alpha levels.
Parse errors carry the line and column of the offending YAML node.  The
normalised form returned by :meth:`ExperimentConfig.to_dict` parses back
to an equal config, and its hash is embedded in every output file.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .expr import PriorExpression, prior_from_expression
from .family import ParametricFamily, PriorField, family_from_spec, list_families, builtin_family
from .numerics import NumericsConfig, stable_hash

TASKS = ("residual", "hpd-residual", "upmp", "hpd-upmp", "fields", "diagnose", "coverage", "verify")
FORMATS = ("csv", "json", "both")
DEFAULT_ALPHAS = [round(0.05 * k, 2) for k in range(1, 20)]


class _Marks:
    """Source positions of YAML nodes, keyed by their path in the document."""

    def __init__(self):
        self.pos: dict = {}

    def at(self, path) -> tuple:
        path = tuple(path)
        while path and path not in self.pos:
            path = path[:-1]
        return self.pos.get(path, (None, None))


def _scalar(node):
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _construct(node, path, marks: _Marks):
    marks.pos[tuple(path)] = (node.start_mark.line + 1, node.start_mark.column + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _scalar(k)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1, k.start_mark.column + 1)
            marks.pos[tuple(path) + (key,)] = (k.start_mark.line + 1, k.start_mark.column + 1)
            out[key] = _construct(v, list(path) + [key], marks)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, list(path) + [i], marks) for i, v in enumerate(node.value)]
    return _scalar(node)


@dataclass
class PriorSpec:
    """A named prior or an expression for the log prior, with optional residual bounds."""

    name: str
    expr: str | None = None
    max_residual: float | None = None
    min_residual: float | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name}
        for k in ("expr", "max_residual", "min_residual"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


@dataclass
class CoverageSpec:
    theta0: list
    n: int
    replicates: int
    kind: str = "quantile"
    z_max: float = 3.0

    def to_dict(self) -> dict:
        return {"theta0": list(self.theta0), "n": self.n, "replicates": self.replicates, "kind": self.kind,
                "z_max": self.z_max}


@dataclass
class ExperimentConfig:
    task: str
    family: object  # built-in name or user family spec mapping
    priors: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    numerics: dict = field(default_factory=dict)
    seed: int = 0
    output: dict = field(default_factory=lambda: {"dir": "out", "prefix": "run", "format": "both"})
    coverage: CoverageSpec | None = None
    expect: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "family": self.family,
            "priors": [p.to_dict() for p in self.priors],
            "thetas": [list(t) for t in self.thetas],
            "alphas": list(self.alphas),
            "numerics": dict(sorted(self.numerics.items())),
            "seed": self.seed,
            "output": dict(sorted(self.output.items())),
        }
        if self.coverage is not None:
            d["coverage"] = self.coverage.to_dict()
        if self.expect:
            d["expect"] = dict(sorted(self.expect.items()))
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def numerics_config(self) -> NumericsConfig:
        return NumericsConfig.from_dict(self.numerics)

    def resolve_family(self) -> ParametricFamily:
        if isinstance(self.family, dict):
            return family_from_spec(self.family)
        return builtin_family(self.family)

    def resolve_priors(self, fam: ParametricFamily, cfg: NumericsConfig | None = None) -> list[PriorField]:
        cfg = cfg or self.numerics_config()
        out = []
        for p in self.priors:
            if p.expr is not None:
                out.append(prior_from_expression(p.expr, fam.param_dim, p.name, cfg))
            else:
                out.append(fam.prior(p.name))
        return out

    def theta_array(self) -> np.ndarray:
        return np.asarray(self.thetas, dtype=float)


def _expand_grid(spec, where, marks):
    """A theta grid is a list of points or ``{axes: [[lo, hi, num], ...]}`` (tensor product)."""
    if isinstance(spec, dict):
        if set(spec) != {"axes"}:
            raise ConfigError("theta grid mapping takes exactly one key, 'axes'", *marks.at(where))
        axes = []
        for i, ax in enumerate(spec["axes"]):
            if not (isinstance(ax, list) and len(ax) == 3):
                raise ConfigError("each axis is [low, high, count]", *marks.at(where + ["axes", i]))
            lo, hi, num = ax
            if int(num) < 1:
                raise ConfigError("axis count must be positive", *marks.at(where + ["axes", i]))
            axes.append(np.linspace(float(lo), float(hi), int(num)).tolist())
        return [list(t) for t in itertools.product(*axes)]
    if not isinstance(spec, list):
        raise ConfigError("thetas must be a list of points or an axes mapping", *marks.at(where))
    out = []
    for i, t in enumerate(spec):
        t = t if isinstance(t, list) else [t]
        try:
            out.append([float(v) for v in t])
        except (TypeError, ValueError):
            raise ConfigError("theta components must be numbers", *marks.at(where + [i])) from None
    return out


def _num(value, path, marks, kind=float, positive=False):
    if isinstance(value, bool):
        raise ConfigError(f"{path[-1]} must be a number", *marks.at(path))
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path[-1]} must be a number", *marks.at(path)) from None
    if kind is int and v != value:
        raise ConfigError(f"{path[-1]} must be an integer", *marks.at(path))
    if positive and v <= 0:
        raise ConfigError(f"{path[-1]} must be positive", *marks.at(path))
    return v


_TOP_KEYS = {"task", "family", "priors", "thetas", "alphas", "numerics", "seed", "output", "coverage", "expect"}
_NEEDS_PRIORS = {"residual", "hpd-residual", "coverage"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML config text."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ConfigError(f"YAML syntax error: {exc.problem}", line, col) from None
    if node is None:
        raise ConfigError("empty config", 1, 1)
    marks = _Marks()
    data = _construct(node, [], marks)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", *marks.at([]))
    for k in data:
        if k not in _TOP_KEYS:
            raise ConfigError(f"unknown key {k!r}", *marks.at([k]))

    task = data.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}", *marks.at(["task"]))

    fam_ref = data.get("family")
    if fam_ref is None:
        raise ConfigError("missing 'family'", 1, 1)
    try:
        if isinstance(fam_ref, dict):
            fam = family_from_spec(fam_ref)
        elif isinstance(fam_ref, str) and fam_ref in list_families():
            fam = builtin_family(fam_ref)
        else:
            raise ValueError(f"unknown family {fam_ref!r}; built-ins: {', '.join(list_families())}")
    except ValueError as exc:
        raise ConfigError(str(exc), *marks.at(["family"])) from None

    numerics = data.get("numerics") or {}
    try:
        NumericsConfig.from_dict(numerics)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"numerics: {exc}", *marks.at(["numerics"])) from None

    priors = []
    for i, p in enumerate(data.get("priors") or []):
        where = ["priors", i]
        if isinstance(p, str):
            p = {"name": p}
        if not isinstance(p, dict) or "name" not in p:
            raise ConfigError("a prior is a name or a mapping with 'name'", *marks.at(where))
        extra = set(p) - {"name", "expr", "max_residual", "min_residual"}
        if extra:
            raise ConfigError(f"unknown prior keys {sorted(extra)}", *marks.at(where + [sorted(extra)[0]]))
        spec = PriorSpec(str(p["name"]), None if p.get("expr") is None else str(p["expr"]),
                         None if p.get("max_residual") is None else _num(p["max_residual"], where + ["max_residual"], marks),
                         None if p.get("min_residual") is None else _num(p["min_residual"], where + ["min_residual"], marks))
        if spec.expr is not None:
            line, col = marks.at(where + ["expr"])
            PriorExpression(spec.expr, fam.param_dim, line, (col or 1) - 1)
        elif spec.name not in fam.named_priors:
            raise ConfigError(f"prior {spec.name!r} is not defined for {fam.name}; named priors: "
                              f"{', '.join(sorted(fam.named_priors))}; or give 'expr'", *marks.at(where))
        priors.append(spec)
    if task in _NEEDS_PRIORS and not priors:
        raise ConfigError(f"task {task} needs at least one prior", *marks.at(["task"]))

    thetas = []
    if "thetas" in data:
        thetas = _expand_grid(data["thetas"], ["thetas"], marks)
    if task != "coverage" and not thetas:
        raise ConfigError(f"task {task} needs a non-empty theta grid", *marks.at(["thetas"] if "thetas" in data else ["task"]))
    for i, t in enumerate(thetas):
        if len(t) != fam.param_dim:
            raise ConfigError(f"theta point has {len(t)} components, {fam.name} has {fam.param_dim}",
                              *marks.at(["thetas", i]))
        if not fam.in_domain(np.asarray(t)):
            raise ConfigError(f"theta {t} outside the domain ({fam.domain_text})", *marks.at(["thetas", i]))

    alphas = data.get("alphas", list(DEFAULT_ALPHAS))
    if not isinstance(alphas, list) or not alphas:
        raise ConfigError("alphas must be a non-empty list", *marks.at(["alphas"]))
    alphas = [_num(a, ["alphas", i], marks) for i, a in enumerate(alphas)]
    for i, a in enumerate(alphas):
        if not 0 < a < 1:
            raise ConfigError("alpha levels must lie in (0, 1)", *marks.at(["alphas", i]))

    seed = _num(data.get("seed", 0), ["seed"], marks, int)
    if not 0 <= seed < 2**63:
        raise ConfigError("seed must be a non-negative 63-bit integer", *marks.at(["seed"]))

    output = {"dir": "out", "prefix": "run", "format": "both"}
    for k, v in (data.get("output") or {}).items():
        if k not in output:
            raise ConfigError(f"unknown output key {k!r}", *marks.at(["output", k]))
        output[k] = str(v)
    if output["format"] not in FORMATS:
        raise ConfigError(f"output format must be one of {', '.join(FORMATS)}", *marks.at(["output", "format"]))

    cov = None
    if task == "coverage":
        c = data.get("coverage")
        if not isinstance(c, dict):
            raise ConfigError("task coverage needs a 'coverage' mapping (theta0, n, replicates)", *marks.at(["task"]))
        for k in c:
            if k not in {"theta0", "n", "replicates", "kind", "z_max"}:
                raise ConfigError(f"unknown coverage key {k!r}", *marks.at(["coverage", k]))
        for k in ("theta0", "n", "replicates"):
            if k not in c:
                raise ConfigError(f"coverage needs {k!r}", *marks.at(["coverage"]))
        reps = _num(c["replicates"], ["coverage", "replicates"], marks, int)
        if reps < 100:
            raise ConfigError("coverage replicates must be at least 100", *marks.at(["coverage", "replicates"]))
        th0 = c["theta0"] if isinstance(c["theta0"], list) else [c["theta0"]]
        th0 = [_num(v, ["coverage", "theta0"], marks) for v in th0]
        if len(th0) != fam.param_dim or not fam.in_domain(np.asarray(th0)):
            raise ConfigError(f"theta0 must be a point of {fam.name} ({fam.domain_text})", *marks.at(["coverage", "theta0"]))
        kind = str(c.get("kind", "quantile"))
        if kind not in ("quantile", "hpd"):
            raise ConfigError("coverage kind must be quantile or hpd", *marks.at(["coverage", "kind"]))
        cov = CoverageSpec(th0, _num(c["n"], ["coverage", "n"], marks, int, positive=True), reps, kind,
                           _num(c.get("z_max", 3.0), ["coverage", "z_max"], marks, positive=True))
        if kind == "quantile" and fam.obs_dim != 1:
            raise ConfigError("quantile coverage needs a univariate family", *marks.at(["coverage", "kind"]))
    elif "coverage" in data:
        raise ConfigError("'coverage' is only used by task coverage", *marks.at(["coverage"]))
    if task in ("residual", "upmp", "fields") and fam.obs_dim != 1:
        raise ConfigError(f"task {task} needs a univariate family", *marks.at(["family"]))

    expect = data.get("expect") or {}
    allowed = {"upmp": {"gradient", "tolerance"}, "hpd-upmp": {"gradient", "tolerance"},
               "fields": {"gradient_field"}, "diagnose": {"form", "b_singular"}}.get(task, set())
    for k, v in expect.items():
        if k not in allowed:
            raise ConfigError(f"expectation {k!r} not available for task {task}", *marks.at(["expect", k]))
    if "gradient" in expect:
        g = expect["gradient"]
        if not isinstance(g, list) or len(g) != fam.param_dim:
            raise ConfigError(f"expected gradient needs {fam.param_dim} expressions", *marks.at(["expect", "gradient"]))
        expect = dict(expect)
        expect["gradient"] = [str(e) for e in g]
        for i, e in enumerate(expect["gradient"]):
            line, col = marks.at(["expect", "gradient", i])
            PriorExpression(e, fam.param_dim, line, (col or 1) - 1)
    if "tolerance" in expect:
        expect["tolerance"] = _num(expect["tolerance"], ["expect", "tolerance"], marks, positive=True)

    return ExperimentConfig(task, fam_ref, priors, thetas, alphas, dict(numerics), seed, output, cov, dict(expect))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())

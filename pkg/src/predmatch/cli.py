"""Command-line front end.

Subcommands::

    predmatch run CONFIG        run one experiment config
    predmatch verify            run the acceptance criteria
    predmatch list-families     list built-in families
    predmatch describe FAMILY   show a family's parameters, domain and priors

Exit status is 0 when every requested check passes, 1 when some check
fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, LinearlyDependentXi, PredMatchError
from .expr import PriorExpression
from .family import CheckResult, builtin_family, list_families, validate_family
from .report import dumps, fmt

TABLE_SCHEMA = "predmatch.table/1"


@dataclass
class Table:
    """A plain result table written as CSV and JSON with provenance fields."""

    name: str
    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self, header: str) -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"name": self.name, "columns": list(self.columns),
                "rows": [dict(zip(self.columns, r)) for r in self.rows]}


@dataclass
class TaskResult:
    tables: list
    summary: list  # human-readable lines
    passed: bool
    reports: list = field(default_factory=list)  # objects with to_csv / to_json


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


def _task_residual(conf: ExperimentConfig, fam, cfg, workers):
    from .quantile import residual_sweep

    kind = "quantile" if conf.task == "residual" else "hpd"
    priors = conf.resolve_priors(fam, cfg)
    reports = residual_sweep(fam, priors, conf.theta_array(), conf.alphas, cfg, kind, workers)
    summary, passed = [], True
    rows = []
    for spec, rep in zip(conf.priors, reports):
        ok = True
        if spec.max_residual is not None:
            ok &= rep.sup_norm <= spec.max_residual
        if spec.min_residual is not None:
            ok &= rep.sup_norm >= spec.min_residual
        passed &= ok
        bound = []
        if spec.max_residual is not None:
            bound.append(f"<= {spec.max_residual:g}")
        if spec.min_residual is not None:
            bound.append(f">= {spec.min_residual:g}")
        verdict = _verdict(ok) if bound else "----"
        summary.append(f"{spec.name:<24} sup|eps| = {rep.sup_norm:.3e}  err_est = {rep.max_err_est:.1e}  "
                       f"{' and '.join(bound) or 'no bound'}  [{verdict}]")
        rows.append([spec.name, rep.sup_norm, rep.max_err_est, verdict])
    table = Table("summary", ["prior", "sup_abs_epsilon", "max_err_est", "verdict"], rows)
    return TaskResult([table], summary, passed, reports)


def _expected_gradient(conf, fam):
    exprs = [PriorExpression(e, fam.param_dim) for e in conf.expect.get("gradient", [])]
    return (lambda th: np.array([e(th) for e in exprs])) if exprs else None


def _task_upmp(conf, fam, cfg, workers):
    from .hpd import hpd_upmp_gradient
    from .quantile import upmp_gradient

    fn = upmp_gradient if conf.task == "upmp" else hpd_upmp_gradient
    expected = _expected_gradient(conf, fam)
    tol = conf.expect.get("tolerance", 1e-4)
    p = fam.param_dim
    cols = [f"theta{i + 1}" for i in range(p)] + [f"grad{i + 1}" for i in range(p)] + ["max_abs_diff", "status"]
    rows, passed, worst, errors = [], True, 0.0, 0
    for th in conf.theta_array():
        try:
            g = fn(fam, th, cfg)
            status = "ok"
            diff = float(np.max(np.abs(g - expected(th)))) if expected else float("nan")
            if expected:
                worst = max(worst, diff)
                passed &= diff <= tol
        except (LinearlyDependentXi, PredMatchError) as exc:
            g = np.full(p, np.nan)
            diff = float("nan")
            status = f"{type(exc).__name__}: {exc}"
            errors += 1
            passed = False
        rows.append(list(th) + list(g) + [diff, status])
    line = f"{conf.task}: {len(rows)} points, {errors} numerical failures"
    if expected:
        line += f", max |grad - expected| = {worst:.3e} (tolerance {tol:g}) [{_verdict(passed)}]"
    return TaskResult([Table("gradient", cols, rows)], [line], passed)


def _task_fields(conf, fam, cfg, workers):
    from .quantile import gradient_field_test, h_field, upmp_gradient

    p = fam.param_dim
    thetas = conf.theta_array()
    rows = []
    for th in thetas:
        rows.append(list(th) + list(h_field(fam, th, cfg)) + list(upmp_gradient(fam, th, cfg)))
    curl = gradient_field_test(lambda t: upmp_gradient(fam, t, cfg), thetas, cfg)
    cols = ([f"theta{i + 1}" for i in range(p)] + [f"h{i + 1}" for i in range(p)]
            + [f"upmp{i + 1}" for i in range(p)])
    curl_rows = [list(th) + [c] for th, c in zip(thetas, curl.per_point)]
    want = conf.expect.get("gradient_field")
    passed = True if want is None else bool(want) == curl.is_gradient
    line = (f"h field on {len(rows)} points; max curl of the uniformly matching field {curl.max_curl:.3e} "
            f"(tolerance {curl.tolerance:g}): {'gradient' if curl.is_gradient else 'not a gradient'}")
    if want is not None:
        line += f" [{_verdict(passed)}]"
    return TaskResult([Table("fields", cols, rows),
                       Table("curl", [f"theta{i + 1}" for i in range(p)] + ["curl"], curl_rows)], [line], passed)


def _task_diagnose(conf, fam, cfg, workers):
    from .hpd import b_matrix, separability_diagnosis

    thetas = conf.theta_array()
    p = fam.param_dim
    rows, singular = [], []
    for th in thetas:
        B = b_matrix(fam, th, cfg)
        singular.append(B.singular)
        rows.append(list(th) + [B.min_eigenvalue, float(B.eigenvalues[-1]), B.ratio, B.singular])
    sep = separability_diagnosis(fam, thetas, cfg, tol=None)
    passed = True
    if "form" in conf.expect:
        passed &= sep.form == conf.expect["form"]
    if "b_singular" in conf.expect:
        passed &= all(s == bool(conf.expect["b_singular"]) for s in singular)
    summary = [f"separability form {sep.form} (common-profile {sep.evidence_common_profile:.2e}, "
               f"rank-one {sep.evidence_rank_one:.2e}, per-component {sep.evidence_per_component:.2e}); "
               f"xi dependent: {sep.dependent}",
               f"b matrix singular at {sum(singular)} of {len(singular)} points"]
    if conf.expect:
        summary.append(f"expectations [{_verdict(passed)}]")
    sep_table = Table("separability", ["form", "evidence_common_profile", "evidence_rank_one",
                                       "evidence_per_component", "dependence", "dependent", "tolerance", "n_theta"],
                      [[sep.form, sep.evidence_common_profile, sep.evidence_rank_one, sep.evidence_per_component,
                        sep.dependence, sep.dependent, sep.tolerance, sep.n_theta]])
    cols = [f"theta{i + 1}" for i in range(p)] + ["b_min_eigenvalue", "b_max_eigenvalue", "b_ratio", "b_singular"]
    return TaskResult([Table("b_matrix", cols, rows), sep_table], summary, passed)


def _task_coverage(conf, fam, cfg, workers):
    from .coverage import coverage_mc, coverage_mc_hpd

    c = conf.coverage
    fn = coverage_mc if c.kind == "quantile" else coverage_mc_hpd
    reports, summary, passed = [], [], True
    for k, (spec, prior) in enumerate(zip(conf.priors, conf.resolve_priors(fam, cfg))):
        try:
            reps = fn(fam, prior, c.theta0, c.n, list(conf.alphas), c.replicates, conf.seed + k, cfg,
                      workers=workers)
        except PredMatchError as exc:
            summary.append(f"{spec.name}: {type(exc).__name__}: {exc} [FAIL]")
            passed = False
            continue
        for r in reps:
            ok = r.ok and abs(r.z_score) <= c.z_max
            passed &= ok
            reports.append(r)
            summary.append(f"{spec.name:<16} alpha={r.alpha:<5g} coverage={r.coverage_hat:.4f} se={r.se:.4f} "
                           f"defect={r.defect_hat:+.4f} predicted={r.predicted_defect:+.4f} z={r.z_score:+.2f} "
                           f"[{_verdict(ok)}]")
    return TaskResult([], summary, passed, [_CoverageBundle(reports)])


class _CoverageBundle:
    def __init__(self, reports):
        self.reports = reports

    def to_csv(self, path=None):
        from .report import coverage_csv
        return coverage_csv(self.reports, path)

    def to_json(self, path=None):
        from .report import coverage_json
        return coverage_json(self.reports, path)


def _task_verify(conf, fam, cfg, workers):
    from .fisher import fisher_info, fisher_via_alpha

    rows, summary, passed = [], [], True
    for th in conf.theta_array():
        diag = validate_family(fam, th, cfg)
        checks = list(diag.checks)
        if fam.obs_dim == 1:
            try:
                a = fisher_info(fam, th, cfg).g
                b = fisher_via_alpha(fam, th, cfg).g
                err = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
                checks.append(CheckResult("fisher_two_routes", err, 1e-3, err <= 1e-3))
            except PredMatchError as exc:
                checks.append(CheckResult("fisher_two_routes", float("nan"), 1e-3, False, str(exc)))
        for ch in checks:
            rows.append([list(map(float, th)), ch.name, ch.error, ch.tolerance, ch.passed, ch.note])
            passed &= ch.passed
        failed = [ch.name for ch in checks if not ch.passed]
        summary.append(f"theta={list(map(float, th))}: {len(checks) - len(failed)}/{len(checks)} checks pass"
                       + (f" (failed: {', '.join(failed)})" if failed else ""))
    rows = [[";".join(fmt(v) for v in r[0])] + r[1:] for r in rows]
    return TaskResult([Table("checks", ["theta", "check", "error", "tolerance", "passed", "note"], rows)],
                      summary, passed)


TASK_RUNNERS = {
    "residual": _task_residual,
    "hpd-residual": _task_residual,
    "upmp": _task_upmp,
    "hpd-upmp": _task_upmp,
    "fields": _task_fields,
    "diagnose": _task_diagnose,
    "coverage": _task_coverage,
    "verify": _task_verify,
}


# ---------------------------------------------------------------------------
# Running configs
# ---------------------------------------------------------------------------


def run_config(conf: ExperimentConfig, out_dir=None, fmt_choice=None, workers=None, stream=None) -> int:
    """Run one experiment and write its reports; returns the exit status."""
    stream = stream or sys.stdout
    fam = conf.resolve_family()
    cfg = conf.numerics_config()
    out = Path(out_dir or conf.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    choice = fmt_choice or conf.output["format"]
    prefix = conf.output["prefix"]
    h = conf.config_hash()
    header = f"# predmatch {__version__} config_hash={h} task={conf.task} family={fam.name}\n"
    try:
        res = TASK_RUNNERS[conf.task](conf, fam, cfg, workers)
    except (PredMatchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        res = TaskResult([Table("error", ["error"], [[f"{type(exc).__name__}: {exc}"]])],
                         [f"{conf.task} failed: {type(exc).__name__}: {exc}"], False)
    written = []
    for t in res.tables:
        stem = out / f"{prefix}-{conf.task}-{t.name}"
        if choice in ("csv", "both"):
            stem.with_suffix(".csv").write_text(t.to_csv(header))
            written.append(stem.with_suffix(".csv"))
        if choice in ("json", "both"):
            stem.with_suffix(".json").write_text(dumps({"schema": TABLE_SCHEMA, "version": __version__,
                                                        "config_hash": h, "task": conf.task,
                                                        "family": fam.name, **t.to_dict()}))
            written.append(stem.with_suffix(".json"))
    for i, rep in enumerate(res.reports):
        name = getattr(rep, "prior", None) or "coverage"
        stem = out / f"{prefix}-{conf.task}-{_slug(name)}"
        if choice in ("csv", "both"):
            text = rep.to_csv()
            stem.with_suffix(".csv").write_text(_with_config_hash(text, h))
            written.append(stem.with_suffix(".csv"))
        if choice in ("json", "both"):
            d = json.loads(rep.to_json())
            d["experiment_config_hash"] = h
            stem.with_suffix(".json").write_text(dumps(d))
            written.append(stem.with_suffix(".json"))
    (out / f"{prefix}-config.yaml").write_text(conf.to_yaml())
    print(f"predmatch {__version__}  task={conf.task}  family={fam.name}  config_hash={h}", file=stream)
    for line in res.summary:
        print("  " + line, file=stream)
    print(f"wrote {len(written)} report files to {out}", file=stream)
    print("RESULT: " + _verdict(res.passed), file=stream)
    return 0 if res.passed else 1


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def _with_config_hash(text: str, h: str) -> str:
    first, rest = text.split("\n", 1)
    return f"{first} experiment_config_hash={h}\n{rest}"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _describe(name: str) -> str:
    fam = builtin_family(name)
    lines = [f"{fam.name}: {fam.description}",
             f"  parameters: {', '.join(fam.param_names)} (p={fam.param_dim})",
             f"  observation dimension: {fam.obs_dim}",
             f"  domain: {fam.domain_text}",
             f"  named priors: {', '.join(sorted(fam.named_priors))}",
             f"  closed-form oracles: {', '.join(sorted(fam.oracles)) or 'none'}"]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="predmatch", description="Predictive matching priors toolkit")
    ap.add_argument("--version", action="version", version=f"predmatch {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the random seed")
        p.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
        p.add_argument("--out-dir", default=None, help="directory for report files")
        p.add_argument("--format", choices=("csv", "json", "both"), default=None, help="report file format")

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    common(p)
    p = sub.add_parser("verify", help="run the acceptance criteria")
    p.add_argument("--only", type=int, nargs="+", default=None, help="criterion numbers to run")
    p.add_argument("--no-replay", action="store_true", help="skip the determinism replay")
    common(p)
    sub.add_parser("list-families", help="list built-in families")
    p = sub.add_parser("describe", help="describe a built-in family")
    p.add_argument("family")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-families":
        for name in list_families():
            print(name)
        return 0
    if args.command == "describe":
        try:
            print(_describe(args.family))
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return 2
        return 0
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if args.command == "verify":
        from .acceptance import DEFAULT_SEED, verify_all

        out = None
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            out = Path(args.out_dir) / "acceptance-manifest.json"
        res = verify_all(seed=DEFAULT_SEED if args.seed is None else args.seed, only=args.only,
                         out_path=out, workers=workers, replay=not args.no_replay,
                         progress=lambda s: print(s, flush=True))
        print(f"manifest sha256 {res.digest}")
        print("RESULT: " + _verdict(res.exit_code == 0))
        return res.exit_code
    try:
        conf = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        conf.seed = args.seed
    return run_config(conf, args.out_dir, args.format, workers)


if __name__ == "__main__":
    sys.exit(main())

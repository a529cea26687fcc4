"""Report containers and their CSV / JSON serialisation.

Floats are written with 17 significant digits (``format(x, ".17g")``) so
files round-trip exactly and diff byte for byte between runs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

RESIDUAL_SCHEMA = "predmatch.residual/1"
COVERAGE_SCHEMA = "predmatch.coverage/1"


def fmt(x) -> str:
    """Canonical text form of a report value."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    return x


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class ResidualReport:
    """Matching residuals epsilon(theta, alpha) over a theta grid x alpha list."""

    family: str
    prior: str
    kind: str
    thetas: np.ndarray
    alphas: np.ndarray
    epsilon: np.ndarray  # (n_theta, n_alpha)
    err_est: np.ndarray
    config_hash: str
    extras: dict = field(default_factory=dict)
    version: str = __version__

    def __post_init__(self):
        if not np.all(np.isfinite(self.epsilon)):
            raise ValueError("residual report contains non-finite values")

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.epsilon)))

    @property
    def max_err_est(self) -> float:
        return float(np.max(self.err_est))

    def rows(self):
        for i, th in enumerate(self.thetas):
            for j, a in enumerate(self.alphas):
                yield i, j, th, a

    def columns(self) -> list[str]:
        p = self.thetas.shape[1]
        return [f"theta{k + 1}" for k in range(p)] + ["alpha", "epsilon", "err_est"] + sorted(self.extras)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# predmatch {self.version} config_hash={self.config_hash} "
                  f"family={self.family} prior={self.prior} kind={self.kind}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for i, j, th, a in self.rows():
            row = [fmt(v) for v in th] + [fmt(a), fmt(self.epsilon[i, j]), fmt(self.err_est[i, j])]
            row += [fmt(self.extras[k][i][j]) for k in sorted(self.extras)]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        cells = []
        for i, j, th, a in self.rows():
            cell = {"theta": th, "alpha": a, "epsilon": self.epsilon[i, j], "err_est": self.err_est[i, j]}
            for k in sorted(self.extras):
                cell[k] = self.extras[k][i][j]
            cells.append(cell)
        return {
            "schema": RESIDUAL_SCHEMA,
            "version": self.version,
            "config_hash": self.config_hash,
            "family": self.family,
            "prior": self.prior,
            "kind": self.kind,
            "sup_norm": self.sup_norm,
            "cells": cells,
        }

    def to_json(self, path=None) -> str:
        text = dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "ResidualReport":
        d = json.loads(text)
        if d.get("schema") != RESIDUAL_SCHEMA:
            raise ValueError("not a residual report")
        cells = d["cells"]
        thetas, alphas = [], []
        for c in cells:
            if c["theta"] not in thetas:
                thetas.append(c["theta"])
            if c["alpha"] not in alphas:
                alphas.append(c["alpha"])
        nt, na = len(thetas), len(alphas)
        eps = np.array([c["epsilon"] for c in cells], dtype=float).reshape(nt, na)
        err = np.array([c["err_est"] for c in cells], dtype=float).reshape(nt, na)
        keys = sorted(set(cells[0]) - {"theta", "alpha", "epsilon", "err_est"}) if cells else []
        extras = {k: np.array([c[k] for c in cells], dtype=object).reshape(nt, na) for k in keys}
        return cls(d["family"], d["prior"], d["kind"], np.array(thetas, float), np.array(alphas, float),
                   eps, err, d["config_hash"], extras, d["version"])


COVERAGE_COLUMNS = [
    "family", "prior", "kind", "theta0", "n", "alpha", "replicates", "coverage_hat", "se",
    "coverage_binary", "se_binary", "defect_hat", "defect_se", "predicted_defect", "z_score",
    "rb_binary_z", "seed", "retries", "failed", "ok", "config_hash", "version",
]


def coverage_csv(reports, path=None) -> str:
    buf = io.StringIO()
    hashes = sorted({r.config_hash for r in reports})
    buf.write(f"# predmatch {__version__} config_hash={','.join(hashes)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COVERAGE_COLUMNS)
    for r in reports:
        d = r.to_dict()
        row = []
        for c in COVERAGE_COLUMNS:
            v = d[c]
            row.append(";".join(fmt(t) for t in v) if isinstance(v, list) else fmt(v))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def coverage_json(reports, path=None) -> str:
    text = dumps({"schema": COVERAGE_SCHEMA, "version": __version__,
                  "reports": [r.to_dict() for r in reports]})
    if path is not None:
        Path(path).write_text(text)
    return text

"""Solution directories on disk.

A solve writes ``u.csv, y.csv, phi.csv, e.csv, ehat.csv`` (layout in
:mod:`parabolic_ocp.fields`), ``report.json``, ``history.csv`` and the
resolved ``config.ini``. Output is byte-for-byte reproducible: floats are
written with ``repr``, JSON keys are sorted and no timestamps are stored.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .fields import Field, load_field, save_field
from .kkt import classify_active_sets, kkt_residuals
from .mesh import EllipticOperator
from .optimize import HISTORY_COLUMNS, Solution
from .problem import ProblemSpec, eval_objective

FIELD_NAMES = ("u", "y", "phi", "e", "ehat")


class MissingFilesError(FileNotFoundError):
    def __init__(self, directory, missing):
        self.directory = Path(directory)
        self.missing = list(missing)
        super().__init__(f"{directory}: missing {', '.join(self.missing)}")


def clean(obj):
    """Recursively replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(clean(obj), sort_keys=True, indent=1) + "\n")
    return path


def write_csv(path, header, rows) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def solution_report(spec: ProblemSpec, sol: Solution) -> dict:
    return {
        "problem": {"name": spec.name, "params": spec.params, "a": spec.a, "b": spec.b, "eps": spec.eps},
        "mesh": sol.mesh.describe(),
        "J": sol.J,
        "certified": sol.certified,
        "message": sol.message,
        "outer_iterations": len(sol.history),
        "kkt": sol.report.to_dict(),
        "active_sets": {"counts": sol.sets.counts(), "measures": sol.sets.measures(),
                        "tol_act": sol.sets.tol_act},
    }


def save_solution(directory, spec: ProblemSpec, sol: Solution, config_text: str | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in FIELD_NAMES:
        save_field(d / f"{name}.csv", getattr(sol, name))
    write_json(d / "report.json", solution_report(spec, sol))
    write_csv(d / "history.csv", HISTORY_COLUMNS, [[h[c] for c in HISTORY_COLUMNS] for h in sol.history])
    if config_text is not None:
        (d / "config.ini").write_text(config_text)
    return d


def load_solution(directory, spec: ProblemSpec, op: EllipticOperator, kkt_tol: float = 1e-6,
                  tol_act: float | None = None) -> Solution:
    """Read the stored fields back and re-evaluate active sets and KKT residuals."""
    d = Path(directory)
    if not d.is_dir():
        raise MissingFilesError(d, [f"{n}.csv" for n in FIELD_NAMES])
    missing = [f"{n}.csv" for n in FIELD_NAMES if not (d / f"{n}.csv").is_file()]
    if missing:
        raise MissingFilesError(d, missing)
    flds = {n: load_field(d / f"{n}.csv") for n in FIELD_NAMES}
    for n, f in flds.items():
        if f.mesh != op.mesh:
            raise ValueError(f"{d / (n + '.csv')}: mesh {f.mesh.describe()} does not match the config")
    sets = classify_active_sets(flds["u"], flds["y"], spec, tol_act, op.mesh)
    rep = kkt_residuals(spec, op, flds["y"], flds["u"], flds["phi"], flds["e"], flds["ehat"], sets, kkt_tol)
    return Solution(u=flds["u"], y=flds["y"], phi=flds["phi"], e=flds["e"], ehat=flds["ehat"],
                    J=eval_objective(spec, flds["y"], flds["u"], op.mesh), report=rep, sets=sets,
                    history=[], certified=rep.certified, message=f"loaded from {d}")


__all__ = ["FIELD_NAMES", "MissingFilesError", "save_solution", "load_solution", "solution_report",
           "write_json", "write_csv", "clean"]

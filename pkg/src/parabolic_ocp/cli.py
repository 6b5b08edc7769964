"""Command-line driver: ``parabolic-ocp {solve,certify,soc,regularity,sweep}``.

Exit codes: 0 when every check passes, 1 when a check fails (or the solver
stops without a certificate), 2 for usage, configuration or input-file
errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .fields import Field
from .io import MissingFilesError, clean, load_solution, save_solution, write_csv, write_json
from .kkt import check_separation, upper_separation_margin, verify_robinson
from .mesh import assemble_elliptic
from .optimize import OptimizationError, finalize, solve_augmented_lagrangian
from .pde import NewtonError, LinearSolveError, solve_state
from .regularity import regularity_report
from .soc import growth_test, min_rayleigh

log = logging.getLogger("parabolic_ocp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup(cfg: RunConfig):
    spec = cfg.problem()
    mesh = cfg.mesh()
    return spec, assemble_elliptic(mesh, spec.diffusion)


# ---------------------------------------------------------------- stages

def run_solve(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    spec, op = _setup(cfg)
    params = cfg.optimizer_params()
    if cfg.verification.tol_act is not None and params.tol_act is None:
        params = replace(params, tol_act=cfg.verification.tol_act)

    def progress(row):
        log.info("outer %3d  J=%.10g  feas=%.2e  ncp=%.2e  pg=%.2e  c=%.0e", row["iteration"], row["J"],
                 row["feasibility"], row["complementarity_ncp"], row["stationarity"], row["penalty"])

    sol = solve_augmented_lagrangian(spec, op, params=params, callback=progress)
    save_solution(out, spec, sol, cfg.to_ini())
    log.info("%s after %d outer iterations (%.1f s); J = %.12g", sol.message, len(sol.history),
             sol.elapsed, sol.J)
    if not sol.certified:
        log.warning("not certified; failing residuals: %s", ", ".join(sol.report.failing()))
    summary = {"J": sol.J, "certified": sol.certified, "separation_margin": sol.report.separation_margin}
    return (EXIT_OK if sol.certified else EXIT_FAIL), summary


def run_certify(cfg: RunConfig, d: Path) -> tuple[int, dict]:
    spec, op = _setup(cfg)
    v = cfg.verification
    stored = load_solution(d, spec, op, v.kkt_tol, v.tol_act)
    try:
        y = solve_state(spec, op, stored.u)[0]
    except (NewtonError, LinearSolveError) as exc:
        raise OptimizationError("state re-solve", exc) from exc
    y, phi, mult, sets, rep = finalize(spec, op, stored.u, y, stored.e, v.kkt_tol, v.tol_act)
    robinson = [verify_robinson(spec, op, y, stored.u, rho, v.tol_act) for rho in v.robinson_rho]
    sep = check_separation(spec, y, stored.u)
    ok = rep.certified and all(r.success for r in robinson)
    out = {
        "certified": ok,
        "kkt": rep.to_dict(),
        "failing": rep.failing(),
        "state_mismatch": float(np.max(np.abs(y.values - stored.y.values))),
        "separation_margin": sep,
        "upper_separation_margin": upper_separation_margin(spec, y, sets),
        "robinson": [dict(r.to_dict(), hint=r.hint) for r in robinson],
        "active_sets": sets.counts(),
    }
    write_json(d / "kkt.json", out)
    for r in robinson:
        log.info("Robinson rho=%g: delta=%.4g (%s)", r.rho, r.delta, "ok" if r.success else r.hint)
    if not rep.certified:
        log.warning("KKT check failed: %s", ", ".join(rep.failing()))
    return (EXIT_OK if ok else EXIT_FAIL), {"separation_margin": sep, "certified": ok}


def run_soc(cfg: RunConfig, d: Path) -> tuple[int, dict]:
    spec, op = _setup(cfg)
    v = cfg.verification
    sol = load_solution(d, spec, op, v.kkt_tol, v.tol_act)
    rep = min_rayleigh(spec, op, sol, n_samples=v.soc_samples, seed=v.seed, soc_margin=v.soc_margin)
    growth = growth_test(spec, op, sol, n_perturb=v.growth_perturbations, radius=v.growth_radius, seed=v.seed)
    rep.kappa = growth.kappa
    if not sol.certified:
        # the cone and the form are only meaningful at a KKT point
        rep.low_confidence = True
        log.warning("input is not a KKT point (%s); second-order results are low-confidence",
                    ", ".join(sol.report.failing()))
    ok = rep.passed and growth.passed and not rep.low_confidence
    write_json(d / "soc.json", {"soc": rep.to_dict(), "growth": growth.to_dict(), "kkt_certified": sol.certified,
                                "passed": ok, "seed": v.seed})
    write_csv(d / "samples.csv", ("kind", "index", "value"),
              [("normalized_form", i, x) for i, x in enumerate(rep.values)]
              + [("growth_ratio", i, x) for i, x in enumerate(growth.ratios)])
    log.info("cone samples: %d accepted, min %.6g; growth kappa %.6g", rep.n_accepted, rep.min_value,
             growth.kappa)
    return (EXIT_OK if ok else EXIT_FAIL), {"soc_min": rep.min_value, "kappa": growth.kappa}


def run_regularity(cfg: RunConfig, d: Path) -> tuple[int, dict]:
    spec, op = _setup(cfg)
    v = cfg.verification
    sol = load_solution(d, spec, op, v.kkt_tol, v.tol_act)
    rep = regularity_report(sol, n_pairs=v.holder_pairs, seed=v.seed, parabolic=v.parabolic)
    warnings = [f"{name}: exponent {est.status}" for name, est in rep.fields.items() if est.status != "ok"]
    body = rep.to_dict()
    body["warnings"] = warnings
    write_json(d / "regularity.json", body)
    write_csv(d / "bins.csv", ("field", "region", "bin", "distance", "max_increment", "count"), rep.bin_rows())
    for w in warnings:
        log.warning("%s", w)
    alphas = {f"alpha_{k}": (est.alpha if est.status == "ok" else None) for k, est in rep.fields.items()}
    return EXIT_OK, alphas


# ---------------------------------------------------------------- sweep

SUMMARY_COLUMNS = ("point", "parameter", "value", "dim", "nx", "ny", "nt", "J", "certified",
                   "separation_margin", "gamma", "alpha_y", "alpha_phi", "alpha_e", "alpha_ehat",
                   "soc_min", "kappa", "status")


def _sweep_point(args):
    """One grid point: the full pipeline in its own directory. Runs in a worker process."""
    cfg, idx, value, out, quiet = args
    _configure_logging(quiet)
    key = cfg.sweep.parameter
    pcfg = cfg.with_override(key, value)
    d = Path(out) / f"point_{idx:03d}"
    row = {"point": idx, "parameter": key, "value": value, **{k: pcfg.mesh_params[k] for k in ("dim", "nx", "ny", "nt")},
           "gamma": pcfg.problem_params.get("gamma")}
    codes = []
    try:
        for stage in (run_solve, run_certify, run_soc, run_regularity):
            code, info = stage(pcfg, d)
            codes.append(code)
            row.update(info)
        row["status"] = "ok" if max(codes) == EXIT_OK else "check_failed"
    except (OptimizationError, ValueError) as exc:
        row["status"] = f"error: {exc}".replace("\n", " ")
    d.mkdir(parents=True, exist_ok=True)
    return row


def run_sweep(cfg: RunConfig, out: Path, jobs: int, quiet: bool) -> tuple[int, dict]:
    if cfg.sweep is None:
        raise UsageError("sweep needs a [sweep] section with parameter and values")
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, i, v, str(out), quiet) for i, v in enumerate(cfg.sweep.values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows = [clean(r) for r in rows]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [[r.get(c) for c in SUMMARY_COLUMNS] for r in rows])
    failed = [r["point"] for r in rows if r["status"] != "ok"]
    if failed:
        log.warning("sweep points failed: %s", ", ".join(map(str, failed)))
    return (EXIT_FAIL if failed else EXIT_OK), {"rows": rows}


# ---------------------------------------------------------------- entry point

def _configure_logging(quiet: bool):
    logging.basicConfig(stream=sys.stderr, format="%(message)s", force=True,
                        level=logging.WARNING if quiet else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parabolic-ocp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--out", type=Path, help="output (solution) directory")
    common.add_argument("--seed", type=int, help="override [verification] seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    sub.add_parser("solve", parents=[common], help="run the optimizer and write a solution directory")
    for name, text in (("certify", "recheck first-order conditions and Robinson's CQ"),
                       ("soc", "sample second-order conditions and quadratic growth"),
                       ("regularity", "estimate Hoelder exponents of the solution fields")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("directory", nargs="?", type=Path, help="solution directory (default: --out)")
    sub.add_parser("sweep", parents=[common], help="run the full pipeline over a parameter grid")
    return p


def _resolve(args) -> tuple[RunConfig, Path]:
    directory = getattr(args, "directory", None) or args.out
    cfg_path = args.config
    if cfg_path is None:
        if directory is not None and (directory / "config.ini").is_file():
            cfg_path = directory / "config.ini"
        else:
            raise UsageError("--config is required (no config.ini in the solution directory)")
    cfg = load_config(cfg_path)
    if args.seed is not None:
        cfg = replace(cfg, verification=replace(cfg.verification, seed=args.seed))
    if directory is None:
        directory = Path(cfg.out_dir)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return cfg, directory


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    _configure_logging(args.quiet)
    try:
        cfg, directory = _resolve(args)
        if args.command == "solve":
            code, _ = run_solve(cfg, directory)
        elif args.command == "certify":
            code, _ = run_certify(cfg, directory)
        elif args.command == "soc":
            code, _ = run_soc(cfg, directory)
        elif args.command == "regularity":
            code, _ = run_regularity(cfg, directory)
        else:
            code, _ = run_sweep(cfg, directory, args.jobs, args.quiet)
    except MissingFilesError as exc:
        log.error("incomplete solution directory %s; missing files:", exc.directory)
        for m in exc.missing:
            log.error("  %s", m)
        return EXIT_USAGE
    except (ConfigError, UsageError) as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except OptimizationError as exc:
        log.error("solver failure in stage '%s': %s", exc.stage, exc.cause)
        return EXIT_FAIL
    except ValueError as exc:  # corrupt or mismatched field files
        log.error("error: %s", exc)
        return EXIT_USAGE
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

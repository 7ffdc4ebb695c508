"""Command-line interface: ``crhybrid {solve,study,bench}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import driver, mmio
from .driver import (
    CASES,
    LinearSolveError,
    NewtonError,
    convergence_study,
    expand_plan,
    fmt,
    read_plan,
    result_row,
    rows_markdown,
    study_csv,
    study_markdown,
    write_report,
)
from .solvers import SolverConfig

PRECONDS = ["none", "jacobi"] + [f"ilu{k}" for k in range(9)]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--case", choices=sorted(CASES), help="default: gt2d")
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--re", type=float, dest="Re")
    p.add_argument("--nu", type=float)
    p.add_argument("--path", choices=driver.PATHS)
    p.add_argument("--solver", choices=("lu", "direct-lu", "cg", "bicgstab", "gmres"))
    p.add_argument("--precond", choices=PRECONDS)
    p.add_argument("--tol", type=float)
    p.add_argument("--maxiter", type=int)
    p.add_argument("--restart", type=int)
    p.add_argument("--stokes", action="store_true", help="drop the convection term")
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crhybrid", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one case")
    _common(s)
    s.add_argument("--level", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--final-time", type=float)
    s.add_argument("--config", type=Path, help="key = value file; flags override it")
    s.add_argument("--export-system", action="store_true",
                   help="write the last linear system to OUT in Matrix Market format")

    st = sub.add_parser("study", help="convergence study over mesh levels")
    _common(st)
    st.add_argument("--levels", required=True, help="comma-separated mesh levels, e.g. 8,16,32")
    st.add_argument("--cfl-rule", default="dt-over-h2=0.16", help="dt-over-h2=C")
    st.add_argument("--final-time", type=float)

    b = sub.add_parser("bench", help="run a plan of configurations")
    b.add_argument("--plan", type=Path, required=True)
    b.add_argument("--out", type=Path)
    b.add_argument("-v", "--verbose", action="store_true")
    return ap


_SOLVER_FLAGS = {"solver": "method", "precond": "precond", "tol": "tol", "maxiter": "maxiter", "restart": "restart"}


def _entry(args, extra=()) -> dict:
    """Flag values as a plan entry (keys the user did not set are left out)."""
    e = {}
    if getattr(args, "config", None):
        for k, v in read_plan(args.config.read_text()).items():
            if len(v) != 1:
                raise ValueError(f"config key {k!r} must have a single value")
            e[k] = v[0]
    for k in ("case", "dim", "Re", "nu", "path", *_SOLVER_FLAGS, *extra):
        v = getattr(args, k, None)
        if v is not None:
            e[k] = v
    if args.stokes:
        e["convective"] = False
    return e


def parse_cfl_rule(rule: str) -> float:
    key, _, val = rule.partition("=")
    if key.strip() != "dt-over-h2" or not val:
        raise ValueError("--cfl-rule must look like dt-over-h2=C")
    c = float(val)
    if c <= 0:
        raise ValueError("dt/h^2 must be positive")
    return c


def cmd_solve(args) -> int:
    entry = _entry(args, extra=("level", "dt", "steps", "final_time"))
    cfg = driver.config_from_entry(entry)
    try:
        res = driver.run(cfg)
        row = result_row(res)
    except (LinearSolveError, NewtonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(rows_markdown([row]), end="")
    hist = res.newton[-1]
    print(f"newton iterations (last solve): {hist.iterations}; residuals: "
          + ", ".join(fmt(r) for r in hist.residuals))
    print(f"linear solves: {len(res.reports)}, setups: {res.n_setups}, wall time: {fmt(res.wall_time)} s")
    if args.out:
        write_report([row], args.out, "solve")
        np.savez(args.out / "solution.npz", U=res.U, P=res.P,
                 face_centroids=res.mesh.face_centroids, centroids=res.mesh.centroids)
        (args.out / "newton.csv").write_text(
            "iteration,residual\n" + "".join(f"{i},{fmt(r)}\n" for i, r in enumerate(hist.residuals))
        )
        if args.export_system and res.last_system is not None:
            mmio.write_system(args.out, *res.last_system, cfg.path)
    return 0


def cmd_study(args) -> int:
    C = parse_cfl_rule(args.cfl_rule)
    levels = [int(s) for s in args.levels.split(",") if s.strip()]
    entry = _entry(args, extra=("final_time",))
    case = entry.pop("case", "gt2d")
    over = {k: entry.pop(k) for k in ("dim", "Re", "nu", "path", "convective", "final_time") if k in entry}
    sk = {v: entry.pop(k) for k, v in _SOLVER_FLAGS.items() if k in entry}
    if sk:
        over["solver"] = SolverConfig(**sk)
    if not CASES[case]["transient"]:
        print("error: studies need a transient case", file=sys.stderr)
        return 2
    rows, _ = convergence_study(case, levels, C, **over)
    print(study_markdown(rows), end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "study.csv").write_text(study_csv(rows))
        (args.out / "study.md").write_text(study_markdown(rows))
    return 0


def cmd_bench(args) -> int:
    entries = expand_plan(read_plan(args.plan.read_text()))
    rows = driver.bench(entries)
    print(rows_markdown(rows), end="")
    if args.out:
        write_report(rows, args.out, "bench")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"solve": cmd_solve, "study": cmd_study, "bench": cmd_bench}[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

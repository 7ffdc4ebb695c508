"""Time the compiled and pure-Python ILU(k) kernels on hybrid and coupled matrices.

Usage: python benchmarks/bench_ilu_backends.py [--levels 8,16] [--fill 0,1,2] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from crhybrid.assembly import Discretization
from crhybrid.driver import fmt
from crhybrid.hybrid import HybridSystem
from crhybrid.mesh import build_unit_square_mesh
from crhybrid.solvers import ILU, backends


def matrices(n: int):
    mesh = build_unit_square_mesh(n)
    rng = np.random.default_rng(0)
    disc = Discretization(mesh, 100.0, 1.0, convective=False)
    src = disc.force_rhs(rng.standard_normal((mesh.n_cells, 2)))
    loc = disc.linearize(np.zeros((mesh.n_faces, 2)), np.zeros(mesh.n_cells), src)
    return {"hybrid G": HybridSystem(loc, 100.0).G, "coupled": loc.coupled().matrix}


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", default="8,16")
    ap.add_argument("--fill", default="0,1,2")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    kern = backends()
    if "cython" not in kern:
        print("compiled backend not available; only the Python kernels will be timed")
    print("| matrix | n | k | nnz(LU) | backend | factor_s | solve_s | speedup |")
    print("|---|---|---|---|---|---|---|---|")
    for level in (int(s) for s in args.levels.split(",")):
        for name, A in matrices(level).items():
            r = np.random.default_rng(1).standard_normal(A.shape[0])
            for k in (int(s) for s in args.fill.split(",")):
                ref = None
                for backend in ("python", "cython"):
                    if backend not in kern:
                        continue
                    f = ILU(A, k, backend=backend)
                    tf = best_of(lambda: ILU(A, k, backend=backend), args.repeat)
                    ts = best_of(lambda: f.solve(r), args.repeat)
                    speed = "-" if ref is None else fmt(ref / tf)
                    ref = tf if ref is None else ref
                    print(f"| {name} | {A.shape[0]} | {k} | {f.nnz} | {backend} | {fmt(tf)} | {fmt(ts)} | {speed} |")


if __name__ == "__main__":
    main()

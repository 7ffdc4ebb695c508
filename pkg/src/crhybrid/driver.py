"""Problem setup, time stepping, Newton iteration, error norms, studies and benchmarks."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import Discretization, assemble_vector
from .hybrid import HybridSystem
from .mesh import SimplicialMesh, build_unit_cube_mesh, build_unit_square_mesh
from .problems import (
    ManufacturedSolution,
    constant_force_solution,
    green_taylor_solution,
    lid_velocity,
)
from .solvers import LinearSolver, SolveReport, SolverConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "case", "path", "solver", "precond", "level", "h", "dt", "iters",
    "time_s", "errl2U", "errl2P", "converged",
)

# case id -> defaults; "nu" None means 1/Re
CASES = {
    "gt2d": dict(dim=2, transient=True, convective=True, nu=1.0, Re=100.0, final_time=0.01),
    "gt3d-stokes": dict(dim=3, transient=True, convective=False, nu=1.0, Re=100.0, final_time=0.01),
    "gt3d-ns": dict(dim=3, transient=True, convective=True, nu=1.0, Re=100.0, final_time=0.01),
    "cavity": dict(dim=2, transient=False, convective=True, nu=None, Re=1000.0, final_time=None),
    "constant-force": dict(dim=2, transient=False, convective=False, nu=1.0, Re=1.0, final_time=None),
}
PATHS = ("coupled", "hybrid")


class NewtonError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class LinearSolveError(RuntimeError):
    def __init__(self, report: SolveReport):
        self.report = report
        why = report.breakdown or "not converged"
        super().__init__(
            f"{report.method}/{report.precond}: {why} after {report.iterations} iterations"
            f" (residual {report.residual:.3e})"
        )


@dataclass
class ProblemConfig:
    """One run. Transient runs have ``mu = 1/dt``; steady runs have ``mu = 0``.

    For transient runs give two of ``dt``, ``steps`` and ``final_time``;
    when ``dt`` and ``final_time`` are given the step is shrunk so that an
    integer number of steps lands exactly on the final time.
    """

    case: str = "gt2d"
    dim: int | None = None
    level: int = 8
    Re: float | None = None
    nu: float | None = None
    dt: float | None = None
    steps: int | None = None
    final_time: float | None = None
    convective: bool | None = None
    path: str = "hybrid"
    solver: SolverConfig = field(default_factory=SolverConfig)
    newton_atol: float = 0.0
    newton_rtol: float = 1e-9
    newton_maxiter: int = 25
    force: tuple | None = None
    out: str | None = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {sorted(CASES)}")
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}")
        if self.level < 1:
            raise ValueError("mesh level must be >= 1")
        dflt = CASES[self.case]
        if self.dim is None:
            self.dim = dflt["dim"]
        if self.case.startswith("gt") and self.dim != dflt["dim"]:
            raise ValueError(f"case {self.case} is {dflt['dim']}D")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.Re is None:
            self.Re = dflt["Re"]
        if self.Re <= 0:
            raise ValueError("Re must be positive")
        if self.nu is None:
            self.nu = dflt["nu"] if dflt["nu"] is not None else 1.0 / self.Re
        if self.convective is None:
            self.convective = dflt["convective"]
        if dflt["transient"]:
            self._resolve_time(dflt["final_time"])
        elif self.dt is not None or self.steps is not None:
            # a steady case run in pseudo time keeps the time data
            self._resolve_time(self.final_time)
        if self.force is None and self.case == "constant-force":
            self.force = (1.0, 2.0, 3.0)[: self.dim]

    def _resolve_time(self, default_T):
        dt, n, T = self.dt, self.steps, self.final_time
        if T is None and not (dt is not None and n is not None):
            T = default_T
        if dt is not None and dt <= 0:
            raise ValueError("transient runs need dt > 0")
        if n is not None and n < 1:
            raise ValueError("steps must be >= 1")
        if dt is not None and n is not None:
            T = dt * n
        elif dt is not None:
            n = max(1, int(math.ceil(T / dt - 1e-9)))
            dt = T / n
        elif n is not None:
            dt = T / n
        else:
            raise ValueError("transient runs need dt or steps")
        self.dt, self.steps, self.final_time = float(dt), int(n), float(T)

    @property
    def transient(self) -> bool:
        return self.dt is not None

    @property
    def mu(self) -> float:
        return 1.0 / self.dt if self.transient else 0.0

    def mesh(self) -> SimplicialMesh:
        return build_unit_square_mesh(self.level) if self.dim == 2 else build_unit_cube_mesh(self.level)

    def solution(self) -> ManufacturedSolution:
        if self.case.startswith("gt"):
            return green_taylor_solution(self.Re, self.dim, stokes=not self.convective)
        if self.case == "cavity":
            return lid_velocity(self.dim)
        return constant_force_solution(self.force)


@dataclass
class NewtonHistory:
    residuals: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1


@dataclass
class RunResult:
    config: ProblemConfig
    mesh: SimplicialMesh
    U: np.ndarray                 # face-wise velocity (nf, d)
    P: np.ndarray                 # cell pressures, zero mean
    reports: list                 # every linear solve
    newton: list                  # NewtonHistory per nonlinear solve
    times: list
    errl2U: float = float("nan")
    errl2P: float = float("nan")
    n_setups: int = 0
    wall_time: float = 0.0
    linear_time: float = 0.0
    states: list | None = None
    last_system: tuple | None = None   # (matrix, rhs) of the last linear solve

    @property
    def converged(self) -> bool:
        return all(h.converged for h in self.newton)

    @property
    def mean_iterations(self) -> float:
        return float(np.mean([r.iterations for r in self.reports])) if self.reports else 0.0

    @property
    def time_per_solve(self) -> float:
        return self.linear_time / max(len(self.reports), 1)


def zero_mean(mesh: SimplicialMesh, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return P - (mesh.volumes @ P) / mesh.volumes.sum()


class FlowSolver:
    """Newton solves on one mesh through the coupled or the hybrid path.

    Without convection the Jacobian never changes, so the system matrix (or
    ``G``), its factorization and preconditioner are built once and reused
    by every later solve.
    """

    def __init__(self, mesh: SimplicialMesh, config: ProblemConfig):
        self.mesh = mesh
        self.config = config
        self.disc = Discretization(mesh, config.mu, config.nu, config.convective)
        self.dofmap = self.disc.dofmap
        self.reuse = not config.convective
        self._cache = None
        self.n_setups = 0
        self.linear_time = 0.0
        self.last_system = None
        self.max_copy_gap = 0.0

    def _setup(self, loc):
        cfg = self.config
        if self.reuse and self._cache is not None:
            return self._cache
        self.n_setups += 1
        if cfg.path == "coupled":
            sysm = loc.coupled()
            obj = (None, LinearSolver(sysm.matrix, cfg.solver))
        else:
            hyb = HybridSystem(loc, cfg.mu)
            obj = (hyb, LinearSolver(hyb.G, cfg.solver))
        if self.reuse:
            self._cache = obj
        return obj

    def linear_solve(self, loc):
        """Increment ``(dU, dP)`` (DOF vector, per-cell) of one linearized system."""
        t0 = time.perf_counter()
        hyb, ls = self._setup(loc)
        dm = self.dofmap
        if hyb is None:
            b = np.concatenate([assemble_vector(dm, loc.rhs), loc.g[dm.cell_pressure >= 0]])
            x, rep = ls.solve(b)
            dU, dP = x[: dm.n_velocity], x[dm.n_velocity:]
            self.last_system = (ls.A, b)
        else:
            S = hyb.rhs(loc.rhs, loc.g)
            W, rep = ls.solve(S)
            if rep.converged:
                dU, dP = hyb.recover(W, loc.rhs, loc.g, check_rtol=None)
                self.max_copy_gap = max(self.max_copy_gap, hyb.copy_gap_rel)
            self.last_system = (ls.A, S)
        elapsed = time.perf_counter() - t0
        self.linear_time += elapsed
        rep.wall_time = elapsed
        if not rep.converged:
            raise LinearSolveError(rep)
        return dU, dm.pressure_cells(dP), rep

    def residual_norm(self, U, P, source) -> float:
        return float(np.linalg.norm(self.disc.residual_vector(U, P, source)))

    def newton(self, U, P, source, atol=None, rtol=None, maxiter=None):
        """Newton iteration from ``(U, P)``; boundary rows of ``U`` hold the data.

        At least one step is always taken. Linear problems stop after it.
        """
        cfg = self.config
        atol = cfg.newton_atol if atol is None else atol
        rtol = cfg.newton_rtol if rtol is None else rtol
        maxiter = cfg.newton_maxiter if maxiter is None else maxiter
        U = np.array(U, dtype=float, copy=True)
        P = np.array(P, dtype=float, copy=True)
        dm = self.dofmap
        hist = NewtonHistory()
        F0 = self.residual_norm(U, P, source)
        hist.residuals.append(F0)
        stop = max(atol, rtol * F0)
        for k in range(1, maxiter + 1):
            loc = self.disc.linearize(U, P, source)
            dU, dP, rep = self.linear_solve(loc)
            hist.reports.append(rep)
            U[dm.interior_faces] += dU.reshape(-1, self.mesh.dim)
            P += dP
            try:
                F = self.residual_norm(U, P, source)
            except FloatingPointError as exc:
                raise NewtonError(f"Newton diverged at iteration {k}", hist) from exc
            hist.residuals.append(F)
            log.debug("newton %d: |F| = %.3e", k, F)
            if not cfg.convective or F <= stop:
                hist.converged = True
                return U, P, hist
        raise NewtonError(
            f"Newton did not reach {stop:.3e} in {maxiter} iterations (|F| = {hist.residuals[-1]:.3e})",
            hist,
        )


def boundary_values(mesh: SimplicialMesh, sol: ManufacturedSolution, t: float) -> np.ndarray:
    """Face-wise velocity with exact values on boundary faces, zero inside."""
    U = np.zeros((mesh.n_faces, mesh.dim))
    b = mesh.boundary
    U[b] = sol.velocity(mesh.face_centroids[b], t)
    return U


def compute_errors(mesh: SimplicialMesh, U, P, exact: ManufacturedSolution, t: float):
    """Discrete L2 errors at face centroids (velocity) and centroids (pressure).

    Velocity weights are ``|K|/(d+1)`` per cell and face; pressures are
    compared after removing the volume-weighted mean of both fields.
    """
    d = mesh.dim
    du = np.asarray(U) - exact.velocity(mesh.face_centroids, t)
    w = np.zeros(mesh.n_faces)
    np.add.at(w, mesh.cell_faces.ravel(), np.repeat(mesh.volumes / (d + 1), d + 1))
    eu = math.sqrt(float(w @ (du**2).sum(axis=1)))
    dp = zero_mean(mesh, P) - zero_mean(mesh, exact.pressure(mesh.centroids, t))
    ep = math.sqrt(float(mesh.volumes @ dp**2))
    return eu, ep


def run_transient(config: ProblemConfig, mesh: SimplicialMesh | None = None, keep_states: bool = False) -> RunResult:
    """Implicit Euler from the exact initial velocity.

    Each step solves ``mu M (U - U_prev) + A U + b(U, U) + D^t P = F`` with
    boundary data taken from the exact solution at the new time.
    """
    if not config.transient:
        raise ValueError("run_transient needs a transient configuration")
    t0 = time.perf_counter()
    mesh = mesh or config.mesh()
    sol = config.solution()
    fs = FlowSolver(mesh, config)
    U = sol.velocity(mesh.face_centroids, 0.0) if sol.exact else boundary_values(mesh, sol, 0.0)
    P = np.zeros(mesh.n_cells)
    reports, newton, times = [], [], [0.0]
    states = [(U.copy(), P.copy())] if keep_states else None
    for n in range(1, config.steps + 1):
        t = n * config.dt
        b = mesh.boundary
        U_prev = U
        U = U_prev.copy()
        U[b] = sol.velocity(mesh.face_centroids[b], t)
        source = fs.disc.source_from_force(sol.force, t, u_prev=U_prev)
        U, P, hist = fs.newton(U, P, source)
        newton.append(hist)
        reports.extend(hist.reports)
        times.append(t)
        if keep_states:
            states.append((U.copy(), zero_mean(mesh, P)))
    P = zero_mean(mesh, P)
    res = RunResult(config, mesh, U, P, reports, newton, times, states=states)
    if sol.exact:
        res.errl2U, res.errl2P = compute_errors(mesh, U, P, sol, config.final_time)
    res.n_setups = fs.n_setups
    res.linear_time = fs.linear_time
    res.last_system = fs.last_system
    res.wall_time = time.perf_counter() - t0
    return res


def run_steady_newton(config: ProblemConfig, mesh: SimplicialMesh | None = None) -> RunResult:
    """Steady Newton iteration from rest (boundary data imposed)."""
    if config.transient:
        raise ValueError("run_steady_newton needs a steady configuration (mu = 0)")
    t0 = time.perf_counter()
    mesh = mesh or config.mesh()
    sol = config.solution()
    fs = FlowSolver(mesh, config)
    U = boundary_values(mesh, sol, 0.0)
    P = np.zeros(mesh.n_cells)
    source = fs.disc.source_from_force(sol.force, 0.0)
    U, P, hist = fs.newton(U, P, source)
    P = zero_mean(mesh, P)
    res = RunResult(config, mesh, U, P, hist.reports, [hist], [0.0])
    if sol.exact:
        res.errl2U, res.errl2P = compute_errors(mesh, U, P, sol, 0.0)
    res.n_setups = fs.n_setups
    res.linear_time = fs.linear_time
    res.last_system = fs.last_system
    res.wall_time = time.perf_counter() - t0
    return res


def run(config: ProblemConfig, mesh: SimplicialMesh | None = None) -> RunResult:
    return run_transient(config, mesh) if config.transient else run_steady_newton(config, mesh)


def convergence_ratios(errors) -> list:
    """``log2(E_{i-1} / E_i)`` for consecutive entries; the first is ``None``."""
    e = list(errors)
    return [None] + [math.log2(e[i - 1] / e[i]) for i in range(1, len(e))]


@dataclass
class StudyRow:
    level: int
    dt: float
    h: float
    errl2U: float
    ratioU: float | None
    errl2P: float
    ratioP: float | None


def steps_for(h: float, final_time: float, dt_over_h2: float) -> int:
    """Number of steps so that ``dt <= C h^2`` and the final time is hit."""
    return max(1, int(math.ceil(final_time / (dt_over_h2 * h * h) - 1e-9)))


def convergence_study(case: str, levels, dt_over_h2: float, **overrides):
    """Run ``case`` on each level with ``dt / h^2`` (nearly) constant.

    Returns ``(rows, results)``.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    results = []
    for n in levels:
        base = ProblemConfig(case=case, level=n, dt=1.0, steps=1, **overrides)
        mesh = base.mesh()
        T = overrides.get("final_time") or CASES[case]["final_time"]
        steps = steps_for(mesh.h, T, dt_over_h2)
        cfg = replace(base, dt=None, steps=steps, final_time=T)
        cfg._resolve_time(T)
        log.info("level %d: h=%.4g, %d steps", n, mesh.h, steps)
        results.append(run_transient(cfg, mesh))
    eu = [r.errl2U for r in results]
    ep = [r.errl2P for r in results]
    ru, rp = convergence_ratios(eu), convergence_ratios(ep)
    rows = [
        StudyRow(n, r.config.dt, r.mesh.h, eu[i], ru[i], ep[i], rp[i])
        for i, (n, r) in enumerate(zip(levels, results))
    ]
    return rows, results


def fmt(x) -> str:
    """Six significant digits; ``-`` for missing values."""
    if x is None:
        return "-"
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, (float, np.floating)):
        return f"{x:.6g}"
    return str(x)


def study_markdown(rows) -> str:
    out = ["| dt | h | errl2U | ratio | errl2P | ratio |", "|---|---|---|---|---|---|"]
    for r in rows:
        out.append(
            "| " + " | ".join(fmt(v) for v in (r.dt, r.h, r.errl2U, r.ratioU, r.errl2P, r.ratioP)) + " |"
        )
    return "\n".join(out) + "\n"


def study_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "dt", "h", "errl2U", "ratioU", "errl2P", "ratioP"])
    for r in rows:
        w.writerow([fmt(v) for v in (r.level, r.dt, r.h, r.errl2U, r.ratioU, r.errl2P, r.ratioP)])
    return buf.getvalue()


def well_balanced_test(mesh: SimplicialMesh, f, nu: float = 1.0, mu: float = 0.0, path: str = "hybrid"):
    """Steady (or one-step transient) Stokes with constant force ``f`` and
    zero boundary data.

    Returns ``(max |U|, max |P - f.x_K|)`` with both pressures at zero mean.
    """
    f = np.asarray(f, dtype=float)
    kw = dict(dt=1.0 / mu, steps=1) if mu > 0 else {}
    cfg = ProblemConfig(
        case="constant-force", dim=mesh.dim, level=1, nu=nu, force=tuple(f), path=path,
        convective=False, **kw,
    )
    res = run(cfg, mesh)
    umax = float(np.abs(res.U).max())
    pex = zero_mean(mesh, mesh.centroids @ f)
    perr = float(np.abs(res.P - pex).max())
    return umax, perr


def lid_driven_cavity_config(Re: float = 1000.0, level: int = 32, path: str = "hybrid",
                             dim: int = 2, convective: bool = True, **solver_kw) -> ProblemConfig:
    """Steady cavity: GMRES to 1e-11 (hybrid) or 1e-8 (coupled), Newton to 5e-7.

    Both matrices are indefinite at ``mu = 0`` and ILU without pivoting
    degrades at high fill, so the defaults are GMRES(200) with ILU(1) on
    ``G`` and ILU(3) on the saddle-point matrix.
    """
    if Re <= 0:
        raise ValueError("Re must be positive")
    sk = dict(method="gmres", tol=1e-11 if path == "hybrid" else 1e-8,
              precond="ilu1" if path == "hybrid" else "ilu3", restart=200)
    sk.update(solver_kw)
    return ProblemConfig(
        case="cavity", dim=dim, level=level, Re=Re, path=path, convective=convective,
        solver=SolverConfig(**sk), newton_atol=5e-7, newton_rtol=0.0, newton_maxiter=25,
    )


# ---------------------------------------------------------------- bench

def read_plan(text: str) -> dict:
    """``key = value`` lines with ``#`` comments; commas separate list values."""
    plan = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        plan[key.replace("-", "_")] = [_parse_value(v.strip()) for v in val.split(",") if v.strip()]
    return plan


def _parse_value(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    return s


def expand_plan(plan: dict) -> list[dict]:
    keys = list(plan)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(plan[k] for k in keys))]


_SOLVER_KEYS = {"solver": "method", "precond": "precond", "tol": "tol", "maxiter": "maxiter",
                "restart": "restart", "ordering": "ordering"}


def config_from_entry(entry: dict) -> ProblemConfig:
    entry = dict(entry)
    sk = {v: entry.pop(k) for k, v in _SOLVER_KEYS.items() if k in entry}
    if "re" in entry:
        entry["Re"] = entry.pop("re")
    if entry.get("case") == "cavity":
        entry.pop("case")
        cfg = lid_driven_cavity_config(
            Re=entry.pop("Re", 1000.0), level=entry.pop("level", 32), path=entry.pop("path", "hybrid"),
            dim=entry.pop("dim", 2), convective=entry.pop("convective", True), **sk,
        )
        return replace(cfg, **entry) if entry else cfg
    return ProblemConfig(solver=SolverConfig(**sk), **entry)


def bench(entries, meshes: dict | None = None) -> list[dict]:
    """Run every configuration; failures become rows with ``converged=false``."""
    rows = []
    meshes = {} if meshes is None else meshes
    for entry in entries:
        row = {k: entry.get(k) for k in ("case", "path", "solver", "precond", "level")}
        row.update(h=float("nan"), dt=None, iters=float("nan"), time_s=float("nan"),
                   errl2U=float("nan"), errl2P=float("nan"), converged=False)
        try:
            cfg = config_from_entry(entry)
            row.update(case=cfg.case, path=cfg.path, solver=cfg.solver.label,
                       precond=cfg.solver.precond, level=cfg.level, dt=cfg.dt)
            key = (cfg.dim, cfg.level)
            if key not in meshes:
                meshes[key] = cfg.mesh()
            mesh = meshes[key]
            row["h"] = mesh.h
            res = run(cfg, mesh)
            row.update(iters=res.mean_iterations, time_s=res.time_per_solve,
                       errl2U=res.errl2U, errl2P=res.errl2P, converged=res.converged)
        except (LinearSolveError, NewtonError, ArithmeticError, RuntimeError, ValueError) as exc:
            log.warning("bench entry %s failed: %s", entry, exc)
            row["error"] = str(exc)
        rows.append(row)
    return rows


def rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def rows_markdown(rows) -> str:
    out = ["| " + " | ".join(CSV_COLUMNS) + " |", "|" + "---|" * len(CSV_COLUMNS)]
    for r in rows:
        out.append("| " + " | ".join(fmt(r.get(c)) for c in CSV_COLUMNS) + " |")
    return "\n".join(out) + "\n"


def result_row(res: RunResult) -> dict:
    cfg = res.config
    return dict(
        case=cfg.case, path=cfg.path, solver=cfg.solver.label, precond=cfg.solver.precond,
        level=cfg.level, h=res.mesh.h, dt=cfg.dt, iters=res.mean_iterations,
        time_s=res.time_per_solve, errl2U=res.errl2U, errl2P=res.errl2P, converged=res.converged,
    )


def write_report(rows, out_dir, stem: str = "report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pc, pm = out / f"{stem}.csv", out / f"{stem}.md"
    pc.write_text(rows_csv(rows))
    pm.write_text(rows_markdown(rows))
    return pc, pm

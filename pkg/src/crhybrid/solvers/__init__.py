"""Linear solvers: sparse direct LU and preconditioned Krylov methods."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .direct import DirectLU, SingularMatrixError, direct_lu
from .krylov import SolveReport, bicgstab, cg, gmres
from .precond import (
    BACKEND,
    ILU,
    Identity,
    Jacobi,
    PreconditionerError,
    ZeroPivotError,
    backends,
    ilu_factor,
    jacobi_precond,
    make_preconditioner,
)

METHODS = ("lu", "cg", "bicgstab", "gmres")
_ALIASES = {"direct-lu": "lu", "direct": "lu", "splu": "lu"}


@dataclass
class SolverConfig:
    method: str = "lu"
    tol: float = 1e-10
    maxiter: int | None = None
    restart: int = 50
    precond: str = "none"
    ordering: str = "natural"

    def __post_init__(self):
        self.method = _ALIASES.get(self.method.lower(), self.method.lower())
        if self.method not in METHODS:
            raise ValueError(f"unknown solver {self.method!r}")
        self.precond = self.precond.lower()
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")

    @property
    def label(self) -> str:
        return "direct-lu" if self.method == "lu" else self.method


class LinearSolver:
    """Solver bound to one matrix: the LU factors or the preconditioner are
    built once and reused by every :meth:`solve` call."""

    def __init__(self, A, config: SolverConfig):
        self.A = A
        self.config = config
        t0 = time.perf_counter()
        if config.method == "lu":
            self._lu = DirectLU(A, config.ordering)
            self.M = None
        else:
            self._lu = None
            self.M = make_preconditioner(A, config.precond)
        self.setup_time = time.perf_counter() - t0

    def solve(self, b):
        c = self.config
        if self._lu is not None:
            return self._lu.solve(b)
        kw = dict(tol=c.tol, maxiter=c.maxiter)
        if c.method == "cg":
            return cg(self.A, b, self.M, **kw)
        if c.method == "bicgstab":
            return bicgstab(self.A, b, self.M, **kw)
        return gmres(self.A, b, self.M, restart=c.restart, **kw)


def solve(A, b, config: SolverConfig | None = None):
    """One-shot solve; the report's ``wall_time`` includes the setup."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    ls = LinearSolver(A, config)
    x, rep = ls.solve(b)
    rep.wall_time = time.perf_counter() - t0
    return x, rep


__all__ = [
    "BACKEND", "DirectLU", "ILU", "Identity", "Jacobi", "LinearSolver", "METHODS",
    "PreconditionerError", "SingularMatrixError", "SolveReport", "SolverConfig",
    "ZeroPivotError", "backends", "bicgstab", "cg", "direct_lu", "gmres",
    "ilu_factor", "jacobi_precond", "make_preconditioner", "solve",
]

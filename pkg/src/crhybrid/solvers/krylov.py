"""Preconditioned CG, BiCGStab and restarted GMRES with residual histories.

Preconditioners are objects with a ``solve(r)`` method (see
:mod:`crhybrid.solvers.precond`). Every solver returns ``(x, SolveReport)``
and never raises on non-convergence; breakdowns are reported in
``SolveReport.breakdown``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .precond import Identity


@dataclass
class SolveReport:
    method: str
    precond: str = "none"
    converged: bool = False
    iterations: int = 0
    residual: float = np.inf
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    breakdown: str | None = None
    criterion: str = "true"

    def true_residual(self, A, x, b) -> float:
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(b - A @ x) / (nb if nb > 0 else 1.0))


def _prep(A, b, M):
    b = np.asarray(b, dtype=float)
    if M is None:
        M = Identity(len(b))
    return b, M, getattr(M, "name", type(M).__name__)


def cg(A, b, M=None, tol: float = 1e-8, maxiter: int | None = None):
    """Conjugate gradient; convergence on the preconditioned residual norm
    ``sqrt(r.z) / sqrt(b.M^{-1}b)``.

    ``p.Ap <= 0`` stops the iteration with ``breakdown="indefinite"``.
    """
    t0 = time.perf_counter()
    b, M, pname = _prep(A, b, M)
    n = len(b)
    maxiter = maxiter or 10 * n
    rep = SolveReport("cg", pname, criterion="preconditioned")
    x = np.zeros(n)
    r = b.copy()
    z = M.solve(r)
    rz = float(r @ z)
    if rz < 0:
        rep.breakdown = "preconditioner not positive"
        rep.history = [np.inf]
        rep.wall_time = time.perf_counter() - t0
        return x, rep
    ref = np.sqrt(rz)
    if ref == 0.0:
        rep.converged, rep.residual, rep.history = True, 0.0, [0.0]
        rep.wall_time = time.perf_counter() - t0
        return x, rep
    hist = [1.0]
    p = z.copy()
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if not pAp > 0:
            rep.breakdown = "indefinite"
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = M.solve(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            rep.iterations = it
            hist.append(np.inf)
            rep.breakdown = "preconditioner not positive"
            break
        res = np.sqrt(rz_new) / ref
        hist.append(res)
        rep.iterations = it
        if res <= tol:
            rep.converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    rep.history = hist
    rep.residual = hist[-1]
    rep.wall_time = time.perf_counter() - t0
    return x, rep


def bicgstab(A, b, M=None, tol: float = 1e-8, maxiter: int | None = None):
    """Right-preconditioned BiCGStab; convergence on the true relative residual."""
    t0 = time.perf_counter()
    b, M, pname = _prep(A, b, M)
    n = len(b)
    maxiter = maxiter or 10 * n
    rep = SolveReport("bicgstab", pname)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        rep.converged, rep.residual, rep.history = True, 0.0, [0.0]
        return x, rep
    r = b.copy()
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    hist = [1.0]
    tiny = np.finfo(float).tiny
    for it in range(1, maxiter + 1):
        rho_new = float(rhat @ r)
        if abs(rho_new) <= tiny:
            rep.breakdown = "rho"
            break
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        ph = M.solve(p)
        v = A @ ph
        rv = float(rhat @ v)
        if abs(rv) <= tiny:
            rep.breakdown = "rho"
            break
        alpha = rho_new / rv
        s = r - alpha * v
        rep.iterations = it
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * ph
            r = b - A @ x
            hist.append(np.linalg.norm(r) / bnorm)
            if hist[-1] <= tol:
                rep.converged = True
                break
            rho = rho_new
            continue
        sh = M.solve(s)
        t = A @ sh
        tt = float(t @ t)
        if tt <= tiny:
            rep.breakdown = "omega"
            hist.append(np.linalg.norm(s) / bnorm)
            x += alpha * ph
            break
        omega = float(t @ s) / tt
        x += alpha * ph + omega * sh
        r = s - omega * t
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            r = b - A @ x
            res = np.linalg.norm(r) / bnorm
        hist.append(res)
        rho = rho_new
        if res <= tol:
            rep.converged = True
            break
        if omega == 0.0:
            rep.breakdown = "omega"
            break
    rep.history = hist
    rep.residual = float(hist[-1])
    rep.wall_time = time.perf_counter() - t0
    return x, rep


def gmres(A, b, M=None, tol: float = 1e-8, maxiter: int | None = None, restart: int = 50):
    """Right-preconditioned restarted GMRES(m).

    Within a cycle the Givens estimate is the true residual in exact
    arithmetic; at the end of each cycle the true residual is recomputed and
    decides convergence. A cycle with no reduction is reported as
    ``breakdown="stagnation"``.
    """
    t0 = time.perf_counter()
    b, M, pname = _prep(A, b, M)
    n = len(b)
    maxiter = maxiter or 10 * n
    m = max(1, min(restart, n))
    rep = SolveReport("gmres", pname)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        rep.converged, rep.residual, rep.history = True, 0.0, [0.0]
        return x, rep
    hist = [1.0]
    it = 0
    r = b.copy()
    beta = bnorm
    while it < maxiter:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        start_res = beta / bnorm
        j_done = 0
        for j in range(m):
            Z[j] = M.solve(V[j])
            w = A @ Z[j]
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                hi = H[i, j]
                H[i, j] = cs[i] * hi + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * hi + cs[i] * H[i + 1, j]
            rr = np.hypot(H[j, j], H[j + 1, j])
            if rr == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / rr, H[j + 1, j] / rr
            H[j, j] = rr
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            it += 1
            j_done = j + 1
            hist.append(abs(g[j + 1]) / bnorm)
            if hist[-1] <= tol or it >= maxiter or rr == 0.0:
                break
        k = j_done
        Hk = H[:k, :k]
        diag = np.abs(np.diag(Hk))
        if np.any(diag == 0):
            rep.breakdown = "singular Hessenberg"
            keep = diag > 0
            k = int(np.argmin(keep)) if not keep.all() else k
            Hk = H[:k, :k]
        if k:
            y = _back_substitute(Hk, g[:k])
            x += Z[:k].T @ y
        r = b - A @ x
        beta = np.linalg.norm(r)
        res = beta / bnorm
        if res <= tol:
            rep.converged = True
            hist[-1] = res
            break
        if rep.breakdown:
            break
        if res >= start_res * (1 - 1e-12):
            rep.breakdown = "stagnation"
            break
    rep.iterations = it
    rep.history = hist
    rep.residual = float(np.linalg.norm(b - A @ x) / bnorm)
    rep.wall_time = time.perf_counter() - t0
    return x, rep


def _back_substitute(R, g):
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y

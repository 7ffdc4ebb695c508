"""Preconditioners: identity, Jacobi and level-of-fill ILU(k).

The ILU kernels come from the compiled ``_ilu_core`` extension when it is
importable, otherwise from the pure-Python ``_ilu_py`` module. Setting the
environment variable ``CRHYBRID_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from . import _ilu_py

if os.environ.get("CRHYBRID_PURE_PYTHON"):
    _core = None
else:
    try:
        from . import _ilu_core as _core
    except ImportError:  # pragma: no cover - depends on the build
        _core = None

BACKEND = "cython" if _core is not None else "python"
PIVOT_RTOL = 1e-14


def backends() -> dict:
    """Available kernel modules by name."""
    out = {"python": _ilu_py}
    if _core is not None:
        out["cython"] = _core
    return out


class PreconditionerError(ArithmeticError):
    pass


class ZeroPivotError(PreconditionerError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"zero pivot in row {row}")


class Identity:
    name = "none"

    def __init__(self, n: int):
        self.shape = (n, n)

    def solve(self, r):
        return np.array(r, dtype=float, copy=True)


class Jacobi:
    name = "jacobi"

    def __init__(self, A):
        diag = sp.csr_matrix(A).diagonal()
        zero = np.flatnonzero(diag == 0)
        if zero.size:
            raise ZeroPivotError(int(zero[0]))
        self.inv_diag = 1.0 / diag
        self.shape = (len(diag), len(diag))

    def solve(self, r):
        return self.inv_diag * r


class ILU:
    """Incomplete LU with level-of-fill ``k``.

    The diagonal is always part of the pattern (level 0) so saddle-point
    matrices with structurally zero diagonal can be factored; a pivot that
    vanishes after elimination raises :class:`ZeroPivotError`.
    """

    def __init__(self, A, fill: int = 0, backend: str | None = None):
        if fill < 0:
            raise ValueError("fill level must be >= 0")
        A = sp.csr_matrix(A, dtype=float)
        A.sum_duplicates()
        A.sort_indices()
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("ILU needs a square matrix")
        kern = backends()[backend or BACKEND]
        self.backend = backend or BACKEND
        self.fill = fill
        self.name = f"ilu{fill}"
        self.shape = (n, n)
        indptr = A.indptr.astype(np.int64)
        indices = A.indices.astype(np.int64)
        self.indptr, self.indices, self.levels, self.diag = kern.symbolic(indptr, indices, n, fill)
        vals, bad = kern.numeric(
            indptr, indices, A.data, self.indptr, self.indices, self.diag, PIVOT_RTOL
        )
        if bad >= 0:
            raise ZeroPivotError(int(bad))
        self.data = np.asarray(vals)
        self._solve = kern.solve

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def pattern(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(self.nnz), self.indices, self.indptr), shape=self.shape
        )

    def factors(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(L, U)`` with unit-diagonal ``L`` as explicit sparse matrices."""
        M = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        L = sp.tril(M, k=-1, format="csr") + sp.eye(self.shape[0], format="csr")
        U = sp.triu(M, format="csr")
        return L, U

    def solve(self, r):
        return self._solve(self.indptr, self.indices, self.data, self.diag, np.ascontiguousarray(r, dtype=float))


def ilu_factor(A, fill: int = 0, backend: str | None = None) -> ILU:
    return ILU(A, fill, backend)


def jacobi_precond(A) -> Jacobi:
    return Jacobi(A)


def make_preconditioner(A, name: str):
    """``none``, ``jacobi`` or ``iluK`` with ``K`` in 0..8."""
    name = name.lower()
    if name == "none":
        return Identity(A.shape[0])
    if name == "jacobi":
        return Jacobi(A)
    if name.startswith("ilu"):
        k = int(name[3:] or 0)
        if not 0 <= k <= 8:
            raise ValueError("ILU fill level must be in 0..8")
        return ILU(A, k)
    raise ValueError(f"unknown preconditioner {name!r}")

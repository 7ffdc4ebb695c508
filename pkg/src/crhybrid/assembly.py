"""Global sparse assembly of the coupled velocity-pressure system.

Assembly is split in a symbolic pass (:class:`Pattern`, built once per
DOF map) and a numeric pass that scatters local blocks into the CSR value
array through a precomputed index map, so repeated Newton assemblies reuse
the pattern.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import convection
from .cr_elements import DofMap, cell_average, divergence_vectors, lumped_mass, rhs_vectors, velocity_matrices


class AssemblyError(ValueError):
    pass


class Pattern:
    """Symbolic CSR pattern of a velocity-velocity matrix.

    With ``full=True`` DOFs ``(i, sigma)`` and ``(j, sigma')`` are connected
    whenever some cell holds both faces; with ``full=False`` only ``i == j``.
    """

    def __init__(self, dofmap: DofMap, full: bool = True):
        n = dofmap.n_velocity
        dofs = dofmap.cell_dofs
        d = dofmap.dim
        rows = np.broadcast_to(dofs[:, :, None], dofs.shape + (dofs.shape[1],))
        cols = np.broadcast_to(dofs[:, None, :], rows.shape)
        valid = (rows >= 0) & (cols >= 0)
        if not full:
            comp = np.arange(dofs.shape[1]) % d
            valid &= (comp[:, None] == comp[None, :])[None]
        keys = rows[valid] * n + cols[valid]
        uniq, inverse = np.unique(keys, return_inverse=True)
        self.shape = (n, n)
        self.full = full
        self.valid = valid
        self.scatter = inverse
        r = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, r + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.nnz = len(uniq)

    def assemble(self, blocks: np.ndarray) -> sp.csr_matrix:
        """Sum of ``H_K blocks_K H_K^t`` for blocks ``(nc, n_loc, n_loc)``."""
        if blocks.shape != self.valid.shape:
            raise AssemblyError(
                f"local blocks have shape {blocks.shape}, expected {self.valid.shape}"
            )
        data = np.bincount(self.scatter, weights=blocks[self.valid], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def same_as(self, m: sp.csr_matrix) -> bool:
        m = m.tocsr()
        m.sort_indices()
        return (
            m.shape == self.shape
            and np.array_equal(m.indptr, self.indptr)
            and np.array_equal(m.indices, self.indices)
        )


def pattern(dofmap: DofMap, full: bool = True) -> Pattern:
    cache = dofmap.__dict__.setdefault("_patterns", {})
    if full not in cache:
        cache[full] = Pattern(dofmap, full)
    return cache[full]


def assemble_A(dofmap: DofMap, blocks: np.ndarray, full: bool = True) -> sp.csr_matrix:
    return pattern(dofmap, full).assemble(blocks)


def assemble_D(dofmap: DofMap, D_local: np.ndarray) -> sp.csr_matrix:
    """Divergence matrix: one row per cell except the gauge cell."""
    if D_local.shape != dofmap.cell_dofs.shape:
        raise AssemblyError("divergence blocks do not match the DOF map")
    keep = dofmap.cell_pressure >= 0
    rows = np.broadcast_to(dofmap.cell_pressure[:, None], D_local.shape)
    valid = keep[:, None] & dofmap.local_mask
    D = sp.csr_matrix(
        (D_local[valid], (rows[valid], dofmap.cell_dofs[valid])),
        shape=(dofmap.n_pressure, dofmap.n_velocity),
    )
    D.sort_indices()
    return D


def assemble_vector(dofmap: DofMap, local: np.ndarray) -> np.ndarray:
    """``sum_K H_K local_K`` over interior slots."""
    m = dofmap.local_mask
    return np.bincount(dofmap.cell_dofs[m], weights=local[m], minlength=dofmap.n_velocity)


@dataclass
class CoupledSystem:
    """``[A D^t; D 0] [U; P] = [R; g]`` with the gauge cell removed."""

    A: sp.csr_matrix
    D: sp.csr_matrix
    R: np.ndarray
    g: np.ndarray
    gauge_cell: int = 0

    @property
    def matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.D.T], [self.D, None]], format="csr")

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.R, self.g])

    @property
    def size(self) -> int:
        return self.A.shape[0] + self.D.shape[0]


def assemble_coupled(A, D, R, g, gauge_cell: int = 0) -> CoupledSystem:
    nu_, np_ = A.shape[0], D.shape[0]
    if A.shape != (nu_, nu_) or D.shape[1] != nu_ or len(R) != nu_ or len(g) != np_:
        raise AssemblyError("inconsistent block dimensions for the coupled system")
    return CoupledSystem(sp.csr_matrix(A), sp.csr_matrix(D), np.asarray(R, float), np.asarray(g, float), gauge_cell)


@dataclass
class LocalSystem:
    """Cell-local description of one linear(ized) saddle-point system.

    Both solution paths consume it: the coupled path assembles it, the
    hybrid path eliminates it cell by cell.
    """

    dofmap: DofMap
    A: np.ndarray     # (nc, n_loc, n_loc), boundary rows/columns ignored
    D: np.ndarray     # (nc, n_loc)
    rhs: np.ndarray   # (nc, n_loc), zero on boundary slots
    g: np.ndarray     # (nc,), entry of the gauge cell ignored
    full: bool        # components coupled (convection present)
    symmetric: bool

    def coupled(self) -> CoupledSystem:
        dm = self.dofmap
        A = assemble_A(dm, self.A, self.full)
        D = assemble_D(dm, self.D)
        R = assemble_vector(dm, self.rhs)
        g = self.g[dm.cell_pressure >= 0]
        return CoupledSystem(A, D, R, g, dm.gauge_cell)


class Discretization:
    """Crouzeix-Raviart operator for given ``mu`` (1/time) and ``nu``.

    States are face-wise velocities ``(nf, d)`` (boundary rows carry the
    Dirichlet data) and per-cell pressures ``(nc,)``.
    """

    def __init__(self, mesh, mu: float, nu: float, convective: bool, gauge_cell: int = 0):
        if mu < 0 or nu <= 0:
            raise ValueError("need mu >= 0 and nu > 0")
        self.mesh = mesh
        self.mu = float(mu)
        self.nu = float(nu)
        self.convective = convective
        self.dofmap = DofMap(mesh, gauge_cell)
        d = mesh.dim
        S = velocity_matrices(mesh, mu, nu)
        n = d * (d + 1)
        self.A_stokes = np.einsum("kst,ij->ksitj", S, np.eye(d)).reshape(mesh.n_cells, n, n)
        self.D = divergence_vectors(mesh)
        self.mass = np.repeat(lumped_mass(mesh), d, axis=1)

    def local(self, face_values):
        return np.asarray(face_values, float)[self.mesh.cell_faces].reshape(self.mesh.n_cells, -1)

    def force_rhs(self, fbar=None, u_prev=None) -> np.ndarray:
        """Local momentum source: RT-tested force plus lumped ``mu * U_prev``."""
        mesh = self.mesh
        R = np.zeros((mesh.n_cells, self.dofmap.n_local))
        if fbar is not None:
            R += rhs_vectors(mesh, fbar)
        if u_prev is not None and self.mu > 0:
            R += self.mu * self.mass * self.local(u_prev)
        return R

    def residual(self, face_values, p_cells, source) -> tuple[np.ndarray, np.ndarray]:
        """Local momentum residual (interior slots) and per-cell divergence term.

        The constraint entry is ``(D U)_K - g_K = -sum_sigma U_sigma . a_{K,sigma}``
        over all faces of ``K``.
        """
        mesh = self.mesh
        U = self.local(face_values)
        res = np.einsum("kab,kb->ka", self.A_stokes, U) + self.D * np.asarray(p_cells)[:, None] - source
        if self.convective:
            Ul = U.reshape(mesh.n_cells, mesh.dim + 1, mesh.dim)
            res += convection.residual(Ul, mesh.area_vectors).reshape(mesh.n_cells, -1)
        res[~self.dofmap.local_mask] = 0.0
        cons = (self.D * U).sum(axis=1)
        if not (np.all(np.isfinite(res)) and np.all(np.isfinite(cons))):
            raise FloatingPointError("non-finite residual (diverged iterate)")
        return res, cons

    def residual_vector(self, face_values, p_cells, source) -> np.ndarray:
        res, cons = self.residual(face_values, p_cells, source)
        dm = self.dofmap
        return np.concatenate([assemble_vector(dm, res), cons[dm.cell_pressure >= 0]])

    def linearize(self, face_values, p_cells, source) -> LocalSystem:
        """Newton system for the increment at the given state."""
        mesh = self.mesh
        res, cons = self.residual(face_values, p_cells, source)
        A = self.A_stokes.copy()
        if self.convective:
            Ul = self.local(face_values).reshape(mesh.n_cells, mesh.dim + 1, mesh.dim)
            n = self.dofmap.n_local
            A += convection.jacobian(Ul, mesh.area_vectors).reshape(mesh.n_cells, n, n)
        return LocalSystem(
            dofmap=self.dofmap, A=A, D=self.D, rhs=-res, g=-cons,
            full=self.convective, symmetric=not self.convective,
        )

    def source_from_force(self, f, t: float, u_prev=None) -> np.ndarray:
        fbar = None if f is None else cell_average(self.mesh, f, t)
        return self.force_rhs(fbar, u_prev)


def newton_system(disc: Discretization, face_values, p_cells, source):
    """Coupled Newton system at a state; the solve yields the increment."""
    loc = disc.linearize(face_values, p_cells, source)
    return loc.coupled(), loc

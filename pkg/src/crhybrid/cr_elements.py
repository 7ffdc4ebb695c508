"""Crouzeix-Raviart cell kernels.

Every per-cell quantity is stored on the full set of ``d+1`` face slots of
the cell (ordering of :attr:`SimplicialMesh.cell_faces`) with the velocity
component innermost, so a local vector has ``n_loc = d*(d+1)`` entries and
entry ``d*s + i`` is component ``i`` at slot ``s``. Boundary slots are kept in
the arrays and masked out where the unknowns live on interior faces only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SimplicialMesh


class DofMap:
    """Numbering of velocity and pressure unknowns.

    Velocity unknown ``(i, sigma)`` for interior face ``sigma`` has index
    ``d * interior_index(sigma) + i``; pressures follow the cell order with
    the gauge cell removed.
    """

    def __init__(self, mesh: SimplicialMesh, gauge_cell: int = 0):
        d = mesh.dim
        self.mesh = mesh
        self.dim = d
        self.gauge_cell = gauge_cell
        self.interior_faces = mesh.interior_faces
        face_dof = np.full(mesh.n_faces, -1, dtype=np.int64)
        face_dof[self.interior_faces] = np.arange(len(self.interior_faces))
        self.face_dof = face_dof
        self.n_velocity = d * len(self.interior_faces)
        self.n_pressure = mesh.n_cells - 1
        self.interior_mask = ~mesh.boundary[mesh.cell_faces]
        self.s = self.interior_mask.sum(axis=1)

        fd = face_dof[mesh.cell_faces]
        dofs = d * fd[:, :, None] + np.arange(d)
        dofs[fd < 0] = -1
        self.cell_dofs = dofs.reshape(mesh.n_cells, -1)
        self.local_mask = self.cell_dofs >= 0

        p = np.arange(mesh.n_cells) - (np.arange(mesh.n_cells) > gauge_cell)
        p[gauge_cell] = -1
        self.cell_pressure = p

    @property
    def n_local(self) -> int:
        return self.dim * (self.dim + 1)

    @property
    def n_total(self) -> int:
        return self.n_velocity + self.n_pressure

    def local_dofs(self, cell: int) -> np.ndarray:
        """Global velocity DOFs of the interior slots of ``cell``."""
        dofs = self.cell_dofs[cell]
        return dofs[dofs >= 0]

    def gather(self, u: np.ndarray) -> np.ndarray:
        """Face-wise velocity ``(nf, d)`` from a DOF vector (zero on boundary)."""
        full = np.zeros((self.mesh.n_faces, self.dim))
        full[self.interior_faces] = np.reshape(u, (-1, self.dim))
        return full

    def scatter_faces(self, face_values: np.ndarray) -> np.ndarray:
        """DOF vector from face-wise values (boundary values dropped)."""
        return np.asarray(face_values)[self.interior_faces].ravel()

    def pressure_vector(self, p_cells: np.ndarray) -> np.ndarray:
        """Pressure unknowns from per-cell values relative to the gauge cell."""
        p_cells = np.asarray(p_cells, dtype=float)
        return np.delete(p_cells - p_cells[self.gauge_cell], self.gauge_cell)

    def pressure_cells(self, p: np.ndarray) -> np.ndarray:
        return np.insert(np.asarray(p, dtype=float), self.gauge_cell, 0.0)


@dataclass
class LocalBlocks:
    """Per-cell Stokes blocks on all face slots.

    ``S`` is ``(nc, d+1, d+1)``, ``D`` and ``R`` are ``(nc, n_loc)``.
    """

    S: np.ndarray
    D: np.ndarray
    R: np.ndarray
    mu: float
    nu: float
    fbar: np.ndarray

    def A(self) -> np.ndarray:
        """Component-block-diagonal velocity block ``(nc, n_loc, n_loc)``."""
        d = self.fbar.shape[1]
        return np.einsum("kst,ij->ksitj", self.S, np.eye(d)).reshape(
            len(self.S), d * (d + 1), d * (d + 1)
        )


def cr_gradient(mesh: SimplicialMesh, cell: int, face: int) -> np.ndarray:
    """Constant gradient of the CR basis function of ``face`` on ``cell``."""
    s = mesh.slot_of(cell, face)
    return mesh.area_vectors[cell, s] / mesh.volumes[cell]


def lumped_mass(mesh: SimplicialMesh) -> np.ndarray:
    """Per (cell, slot) lumped mass ``|K|/(d+1)``."""
    return np.repeat(mesh.volumes[:, None] / (mesh.dim + 1), mesh.dim + 1, axis=1)


def velocity_matrices(mesh: SimplicialMesh, mu: float, nu: float) -> np.ndarray:
    """Scalar velocity blocks ``S_K`` on all slots, shape ``(nc, d+1, d+1)``."""
    a = mesh.area_vectors
    vol = mesh.volumes
    S = nu * np.einsum("ksi,kti->kst", a, a) / vol[:, None, None]
    idx = np.arange(mesh.dim + 1)
    S[:, idx, idx] += mu * (vol / (mesh.dim + 1))[:, None]
    return S


def local_velocity_matrix(mesh: SimplicialMesh, cell: int, mu: float, nu: float) -> np.ndarray:
    """``S_K`` restricted to the interior faces of ``cell``."""
    if mu < 0 or nu <= 0:
        raise ValueError("need mu >= 0 and nu > 0")
    S = velocity_matrices(mesh, mu, nu)[cell]
    keep = ~mesh.boundary[mesh.cell_faces[cell]]
    return S[np.ix_(keep, keep)]


def divergence_vectors(mesh: SimplicialMesh) -> np.ndarray:
    """``D_K`` on all slots: ``-a_{K,sigma}^{(i)}``, shape ``(nc, n_loc)``."""
    return -mesh.area_vectors.reshape(mesh.n_cells, -1).copy()


def local_divergence(mesh: SimplicialMesh, cell: int) -> np.ndarray:
    keep = np.repeat(~mesh.boundary[mesh.cell_faces[cell]], mesh.dim)
    return divergence_vectors(mesh)[cell][keep]


def rhs_vectors(mesh: SimplicialMesh, fbar: np.ndarray) -> np.ndarray:
    """Force term tested against the Raviart-Thomas reconstruction.

    ``(R_K)_{i,sigma} = a^{(i)}_{K,sigma} * fbar_K . (x_sigma - x_K)``.
    """
    fbar = np.asarray(fbar, dtype=float)
    xs = mesh.face_centroids[mesh.cell_faces] - mesh.centroids[:, None, :]
    proj = np.einsum("ksi,ki->ks", xs, fbar)
    return (mesh.area_vectors * proj[:, :, None]).reshape(mesh.n_cells, -1)


def local_rhs(mesh: SimplicialMesh, cell: int, fbar_cell) -> np.ndarray:
    fb = np.zeros((mesh.n_cells, mesh.dim))
    fb[cell] = fbar_cell
    keep = np.repeat(~mesh.boundary[mesh.cell_faces[cell]], mesh.dim)
    return rhs_vectors(mesh, fb)[cell][keep]


def cell_average(mesh: SimplicialMesh, f, t: float = 0.0) -> np.ndarray:
    """Cell averages of a vector field by the degree-2 vertex+centroid rule.

    ``f(x, t)`` takes an ``(N, d)`` point array and returns ``(N, d)`` values.
    """
    d = mesh.dim
    # weights exact for quadratics: 2D (1/12, 3/4), 3D (1/20, 4/5)
    w_v, w_c = (1 / 12, 3 / 4) if d == 2 else (1 / 20, 4 / 5)
    xv = mesh.vertices[mesh.cells].reshape(-1, d)
    fv = np.asarray(f(xv, t), dtype=float).reshape(mesh.n_cells, d + 1, d)
    fc = np.asarray(f(mesh.centroids, t), dtype=float)
    return w_v * fv.sum(axis=1) + w_c * fc


def build_local_blocks(mesh: SimplicialMesh, mu: float, nu: float, fbar=None) -> LocalBlocks:
    if mu < 0 or nu <= 0:
        raise ValueError("need mu >= 0 and nu > 0")
    if fbar is None:
        fbar = np.zeros((mesh.n_cells, mesh.dim))
    fbar = np.broadcast_to(np.asarray(fbar, dtype=float), (mesh.n_cells, mesh.dim)).copy()
    if not np.all(np.isfinite(fbar)):
        raise ValueError("cell-averaged force must be finite")
    return LocalBlocks(
        S=velocity_matrices(mesh, mu, nu),
        D=divergence_vectors(mesh),
        R=rhs_vectors(mesh, fbar),
        mu=mu,
        nu=nu,
        fbar=fbar,
    )


def rt_reconstruct(mesh: SimplicialMesh, cell: int, V):
    """Raviart-Thomas lift of face velocities ``V`` (``(d+1, d)``, slot order).

    Returns a callable affine field on the cell and its constant divergence.
    """
    V = np.asarray(V, dtype=float)
    a = mesh.area_vectors[cell]
    s = mesh.vertices[mesh.opposite[cell]]
    vol = mesh.volumes[cell]
    coef = (V * a).sum(axis=1) / (mesh.dim * vol)

    def field(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("s,...si->...i", coef, x[..., None, :] - s)

    div = float((V * a).sum() / vol)
    return field, div


def apply_dirichlet(blocks: LocalBlocks, dofmap: DofMap, boundary_values) -> tuple[np.ndarray, np.ndarray]:
    """Fold Dirichlet data into the local right-hand sides.

    Parameters
    ----------
    boundary_values : (nf, d) array
        Velocity at face centroids; only boundary rows are read.

    Returns
    -------
    R : (nc, n_loc) array
        Momentum right-hand side minus the coupling to boundary columns,
        zero on boundary slots.
    g : (nc,) array
        Divergence-constraint right-hand side ``sum_{ext} U^D . a_{K,sigma}``,
        i.e. what ``(D U)_K`` must equal for a zero discrete divergence.
    """
    mesh = dofmap.mesh
    ud = np.where(mesh.boundary[:, None], np.asarray(boundary_values, dtype=float), 0.0)
    u_loc = ud[mesh.cell_faces].reshape(mesh.n_cells, -1)
    R = blocks.R - np.einsum("kab,kb->ka", blocks.A(), u_loc)
    R[~dofmap.local_mask] = 0.0
    g = -(blocks.D * u_loc).sum(axis=1)
    return R, g


def eval_velocity(mesh: SimplicialMesh, face_values, cell: int, x, tol: float = 1e-10) -> np.ndarray:
    """CR interpolant on ``cell`` at ``x`` from face-wise values ``(nf, d)``."""
    lam = mesh.barycentric(cell, x)
    if np.any(lam < -tol):
        raise ValueError(f"point {np.asarray(x).tolist()} is outside cell {cell}")
    # phi_sigma = 1 - d * lambda_{opposite vertex}
    phi = 1.0 - mesh.dim * lam
    U = np.asarray(face_values, dtype=float)[mesh.cell_faces[cell]]
    return phi @ U

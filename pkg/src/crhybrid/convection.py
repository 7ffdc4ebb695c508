"""Reduced-stencil convection term on the co-volumes of each cell.

All batched functions take the local velocities ``U`` as an array of shape
``(nc, d+1, d)`` (face slots of every cell, boundary slots holding their
Dirichlet values) and the matching area vectors ``(nc, d+1, d)``.
"""
from __future__ import annotations

import numpy as np

from .mesh import SimplicialMesh


def covolume_normals(area_vectors: np.ndarray) -> np.ndarray:
    """``|tau_{s,t}| n_{s,t} = (a_t - a_s)/(d+1)`` for all slot pairs.

    Returns an array ``N[k, s, t, :]``.
    """
    d1 = area_vectors.shape[-2]
    return (area_vectors[..., None, :, :] - area_vectors[..., :, None, :]) / d1


def covolume_area_normal(mesh: SimplicialMesh, cell: int, face: int, other: int) -> np.ndarray:
    if face == other:
        raise ValueError("co-volume interface needs two distinct faces")
    s, t = mesh.slot_of(cell, face), mesh.slot_of(cell, other)
    a = mesh.area_vectors[cell]
    return (a[t] - a[s]) / (mesh.dim + 1)


def fluxes(U: np.ndarray, area_vectors: np.ndarray) -> np.ndarray:
    """Co-volume fluxes ``F[k, s, t]`` (antisymmetric in ``s, t``)."""
    N = covolume_normals(area_vectors)
    w = U[..., :, None, :] + U[..., None, :, :] - U.mean(axis=-2)[..., None, None, :]
    return np.einsum("...sti,...sti->...st", w, N)


def flux(mesh: SimplicialMesh, cell: int, U_cell, face: int, other: int) -> float:
    """Single flux through the interface between the co-volumes of two faces.

    ``U_cell`` holds the velocities of all faces of ``cell`` in slot order.
    """
    if face == other:
        raise ValueError("co-volume interface needs two distinct faces")
    s, t = mesh.slot_of(cell, face), mesh.slot_of(cell, other)
    F = fluxes(np.asarray(U_cell, dtype=float)[None], mesh.area_vectors[cell][None])
    return float(F[0, s, t])


def residual(U: np.ndarray, area_vectors: np.ndarray) -> np.ndarray:
    """Momentum contribution at each (slot, component).

    ``r[s, i] = 1/2 sum_t F_{s,t} (U_t^{(i)} - U_s^{(i)})``.
    """
    F = fluxes(U, area_vectors)
    diff = U[..., None, :, :] - U[..., :, None, :]
    return 0.5 * np.einsum("...st,...sti->...si", F, diff)


def residual_pairs(U: np.ndarray, area_vectors: np.ndarray) -> np.ndarray:
    """Same residual assembled pair by pair from the symmetric-test form.

    Kept as an independent check of :func:`residual`.
    """
    F = fluxes(U, area_vectors)
    d1 = U.shape[-2]
    out = np.zeros_like(U)
    for s in range(d1):
        for t in range(s + 1, d1):
            c = F[..., s, t, None] * (U[..., t, :] - U[..., s, :]) / 2
            out[..., s, :] += c
            out[..., t, :] += c
    return out


def trilinear(U: np.ndarray, V: np.ndarray, area_vectors: np.ndarray) -> float:
    """``b_h(u, v)`` summed over the cells of the batch."""
    return float(np.sum(residual(U, area_vectors) * V))


def jacobian(U: np.ndarray, area_vectors: np.ndarray) -> np.ndarray:
    """Exact derivative of :func:`residual` with respect to every ``U[q, j]``.

    Returns ``(..., d+1, d, d+1, d)`` with index order ``[s, i, q, j]``;
    reshape to ``(n_loc, n_loc)`` for the slot-major local layout.
    """
    d1, d = U.shape[-2:]
    N = covolume_normals(area_vectors)
    F = fluxes(U, area_vectors)
    diff = U[..., None, :, :] - U[..., :, None, :]
    eye = np.eye(d1)
    # dF[s,t]/dU[q,j] = N[s,t,j] * (delta_qs + delta_qt - 1/(d+1))
    sel = eye[:, None, :] + eye[None, :, :] - 1.0 / d1
    dF = np.einsum("...stj,stq->...stqj", N, sel)
    term1 = 0.5 * np.einsum("...stqj,...sti->...siqj", dF, diff)
    # F[s,t] * delta_ij * (delta_qt - delta_qs)
    dd = eye[None, :, :] - eye[:, None, :]
    g = 0.5 * np.einsum("...st,stq->...sq", F, dd)
    term2 = np.einsum("...sq,ij->...siqj", g, np.eye(d))
    return term1 + term2


def local_velocities(mesh: SimplicialMesh, face_values: np.ndarray) -> np.ndarray:
    """Gather face-wise velocities ``(nf, d)`` into ``(nc, d+1, d)``."""
    return np.asarray(face_values, dtype=float)[mesh.cell_faces]

"""Exact elimination of velocity and pressure through cell-wise hybridization.

The coupled system ``[A D^t; D 0][U; P] = [R; g]`` is split into per-cell
copies of the velocity glued by multipliers ``W`` (one per velocity unknown).
Each cell block ``A_K + E_K`` is inverted locally, the pressure is eliminated
through the scalar ``B_K = D_K^t (A_K + E_K)^{-1} D_K`` and what remains is
``G W = S`` with the stencil of the fully coupled velocity matrix. ``U`` and
``P`` are then recovered cell by cell.

Local arrays use the padded slot layout of :mod:`crhybrid.cr_elements`:
boundary slots are decoupled identity rows with zero ``D``, ``C`` and
right-hand side, so every cell has blocks of the same size.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import LocalSystem, assemble_vector, pattern
from .cr_elements import DofMap

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-12
B_RTOL = 1e-14
GERSHGORIN_MARGIN = 1.1
MAX_DOUBLINGS = 60


class HybridError(RuntimeError):
    pass


class SingularBlockError(HybridError):
    def __init__(self, cells, message="singular local block"):
        self.cells = np.atleast_1d(cells)
        super().__init__(f"{message} in cell(s) {self.cells[:10].tolist()}")


@dataclass
class SignData:
    """Diagonals of ``C_K`` and ``E_K`` on the padded local layout."""

    C: np.ndarray        # (nc, n_loc), +-1 on interior slots, 0 on boundary slots
    E: np.ndarray        # (nc, n_loc)
    lam: np.ndarray      # (nc,), shift of the cells of the first partition
    first: np.ndarray    # (nc,) bool, cells carrying the negative shift


def choose_signs(dofmap: DofMap) -> np.ndarray:
    """``+1`` on the lower-indexed cell of each interior face, ``-1`` on the other."""
    mesh = dofmap.mesh
    fc = mesh.face_cells[mesh.cell_faces]                      # (nc, d+1, 2)
    own = np.arange(mesh.n_cells)[:, None]
    sign = np.where(fc[:, :, 0] == own, 1.0, -1.0)
    sign[~dofmap.interior_mask] = 0.0
    return np.repeat(sign, dofmap.dim, axis=1)


def greedy_independent_set(adjacency: list[list[int]]) -> np.ndarray:
    """Maximal independent set visiting cells in ascending index."""
    first = np.zeros(len(adjacency), dtype=bool)
    blocked = np.zeros(len(adjacency), dtype=bool)
    for k, nbrs in enumerate(adjacency):
        if not blocked[k]:
            first[k] = True
            blocked[k] = True
            blocked[nbrs] = True
    return first


def gershgorin_bound(A: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Upper bound on the eigenvalue moduli of the interior part of each block."""
    m = mask[:, :, None] & mask[:, None, :]
    return np.where(m, np.abs(A), 0.0).sum(axis=2).max(axis=1)


def shift_from_partition(dofmap: DofMap, first: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``E_K = -lam_K`` on cells of ``first``, ``+lam_L`` on faces facing them."""
    mesh = dofmap.mesh
    fc = mesh.face_cells[mesh.cell_faces]
    own = np.arange(mesh.n_cells)[:, None]
    other = np.where(fc[:, :, 0] == own, fc[:, :, 1], fc[:, :, 0])
    interior = dofmap.interior_mask
    nb = np.where(interior, other, 0)
    e = np.where(interior & first[nb], lam[nb], 0.0)
    e = np.where(first[:, None] & interior, -lam[:, None], e)
    return np.repeat(e, dofmap.dim, axis=1)


def build_shift(dofmap: DofMap, A: np.ndarray, mu: float) -> SignData:
    """Sign and shift data; no shift when ``mu > 0``."""
    C = choose_signs(dofmap)
    nc = dofmap.mesh.n_cells
    if mu > 0:
        return SignData(C, np.zeros_like(C), np.zeros(nc), np.zeros(nc, dtype=bool))
    first = greedy_independent_set(dofmap.mesh.cell_adjacency())
    lam = np.where(first, GERSHGORIN_MARGIN * gershgorin_bound(A, dofmap.local_mask), 0.0)
    return SignData(C, shift_from_partition(dofmap, first, lam), lam, first)


def padded_blocks(A: np.ndarray, E: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``A_K + E_K`` with boundary rows/columns replaced by a scaled identity."""
    Ah = A.copy()
    n = A.shape[1]
    idx = np.arange(n)
    Ah[:, idx, idx] += E
    m2 = mask[:, :, None] & mask[:, None, :]
    Ah[~m2] = 0.0
    scale = np.abs(Ah).max(axis=(1, 2))
    scale[scale == 0] = 1.0
    diag = Ah[:, idx, idx]
    Ah[:, idx, idx] = np.where(mask, diag, scale[:, None])
    return Ah


def batched_inverse(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jordan inverse with partial pivoting, vectorized over the batch.

    Returns the inverses and, per matrix, the smallest pivot modulus
    relative to the largest entry.
    """
    M = np.array(M, dtype=float, copy=True)
    nb, n, _ = M.shape
    X = np.broadcast_to(np.eye(n), M.shape).copy()
    ar = np.arange(nb)
    scale = np.abs(M).max(axis=(1, 2))
    scale[scale == 0] = 1.0
    min_piv = np.full(nb, np.inf)
    for c in range(n):
        p = c + np.argmax(np.abs(M[:, c:, c]), axis=1)
        swap = p != c
        if np.any(swap):
            rows_c = M[ar, c].copy()
            M[ar, c] = M[ar, p]
            M[ar, p] = rows_c
            xc = X[ar, c].copy()
            X[ar, c] = X[ar, p]
            X[ar, p] = xc
        piv = M[:, c, c]
        min_piv = np.minimum(min_piv, np.abs(piv) / scale)
        safe = np.where(piv == 0, 1.0, piv)
        M[:, c] /= safe[:, None]
        X[:, c] /= safe[:, None]
        f = M[:, :, c].copy()
        f[:, c] = 0.0
        M -= f[:, :, None] * M[:, c][:, None, :]
        X -= f[:, :, None] * X[:, c][:, None, :]
    return X, min_piv


class LocalFactor:
    """Pivoted dense factorization of one local block ``A_K + E_K``."""

    def __init__(self, M, rtol: float = PIVOT_RTOL):
        import scipy.linalg as la

        M = np.asarray(M, dtype=float)
        with warnings.catch_warnings():
            # exact singularity is reported below as SingularBlockError
            warnings.simplefilter("ignore", la.LinAlgWarning)
            self.lu, self.piv = la.lu_factor(M, check_finite=False)
        scale = np.abs(M).max() if M.size else 1.0
        diag = np.abs(np.diag(self.lu))
        self.min_pivot = float(diag.min()) if diag.size else np.inf
        if self.min_pivot < rtol * scale:
            raise SingularBlockError(0, f"pivot {self.min_pivot:.3e} below tolerance")

    def solve(self, b):
        import scipy.linalg as la

        return la.lu_solve((self.lu, self.piv), b, check_finite=False)


def factor_local(A_K, E_K=None) -> LocalFactor:
    M = np.asarray(A_K, dtype=float)
    if E_K is not None:
        M = M + np.diag(E_K)
    return LocalFactor(M)


def compute_BK(factor: LocalFactor, D_K) -> float:
    D_K = np.asarray(D_K, dtype=float)
    B = float(D_K @ factor.solve(D_K))
    inv_norm = 1.0 / factor.min_pivot if factor.min_pivot > 0 else np.inf
    if abs(B) <= B_RTOL * (D_K @ D_K) * inv_norm:
        raise SingularBlockError(0, f"B_K = {B:.3e} is numerically zero")
    return B


def local_G(factor: LocalFactor, D_K, B_K: float | None, C_K, R_K=None, g_K: float = 0.0):
    """Dense ``G_K`` and right-hand side contribution for one cell.

    ``B_K=None`` marks the gauge cell (no pressure projection).
    """
    C_K = np.asarray(C_K, dtype=float)
    n = len(C_K)
    Ainv = factor.solve(np.eye(n))
    if B_K is None:
        Gk = Ainv
    else:
        D_K = np.asarray(D_K, dtype=float)
        Gk = Ainv - np.outer(Ainv @ D_K, D_K @ Ainv) / B_K
    G = C_K[:, None] * Gk * C_K[None, :]
    if R_K is None:
        return G
    s = C_K * (Gk @ np.asarray(R_K, dtype=float))
    if B_K is not None:
        s += C_K * (Ainv @ D_K) * g_K / B_K
    return G, s


class HybridSystem:
    """Cell-wise elimination of one :class:`LocalSystem`.

    The matrix part (``G`` and the local inverses) depends only on the
    blocks; :meth:`rhs` and :meth:`recover` may be called with new local
    right-hand sides, which is how fixed-matrix time stepping reuses it.
    """

    def __init__(self, local: LocalSystem, mu: float, signs: SignData | None = None):
        self.local = local
        dm = local.dofmap
        self.dofmap = dm
        self.mu = mu
        mask = dm.local_mask
        self.gauge = dm.gauge_cell
        D = np.where(mask, local.D, 0.0)
        self.D = D
        signs = signs if signs is not None else build_shift(dm, local.A, mu)
        self.escalations = 0
        while True:
            try:
                self._eliminate(local.A, D, signs)
                break
            except SingularBlockError as err:
                if mu > 0 and not signs.first.any():
                    raise HybridError(
                        "local block singular with zero shift (mu > 0)"
                    ) from err
                if self.escalations >= MAX_DOUBLINGS:
                    raise HybridError(f"shift escalation failed after {MAX_DOUBLINGS} doublings") from err
                signs = self._escalate(signs, err.cells)
                self.escalations += 1
        self.signs = signs
        self.G = pattern(dm, True).assemble(self.G_local)

    def _eliminate(self, A, D, signs):
        dm = self.dofmap
        mask = dm.local_mask
        Ah = padded_blocks(A, signs.E, mask)
        Ainv, min_piv = batched_inverse(Ah)
        bad = np.flatnonzero(min_piv < PIVOT_RTOL)
        if bad.size:
            raise SingularBlockError(bad, "near-zero pivot")
        AinvD = np.einsum("kab,kb->ka", Ainv, D)
        DAinv = np.einsum("ka,kab->kb", D, Ainv)
        B = (D * AinvD).sum(axis=1)
        inv_norm = np.abs(Ainv).sum(axis=2).max(axis=1)
        not_gauge = np.arange(len(B)) != self.gauge
        small = not_gauge & (np.abs(B) <= B_RTOL * (D * D).sum(axis=1) * inv_norm)
        if small.any():
            raise SingularBlockError(np.flatnonzero(small), "near-zero B_K")
        Bs = np.where(not_gauge, B, 1.0)
        proj = np.where(not_gauge[:, None, None], np.einsum("ka,kb->kab", AinvD, DAinv) / Bs[:, None, None], 0.0)
        Gk = Ainv - proj
        C = signs.C
        self.Ahat = Ah
        self.Ainv = Ainv
        self.AinvD = AinvD
        self.DAinv = DAinv
        self.B = np.where(not_gauge, B, np.nan)
        self._Bs = Bs
        self._not_gauge = not_gauge
        self.Gk = Gk
        self.C = C
        self.G_local = C[:, :, None] * Gk * C[:, None, :]

    def _escalate(self, signs: SignData, cells) -> SignData:
        dm = self.dofmap
        adj = dm.mesh.cell_adjacency()
        first, lam = signs.first.copy(), signs.lam.copy()
        if not first.any():
            first = greedy_independent_set(adj)
            lam = np.where(first, GERSHGORIN_MARGIN * gershgorin_bound(self.local.A, dm.local_mask), 0.0)
        bump = set()
        for k in np.atleast_1d(cells):
            if first[k]:
                bump.add(int(k))
            else:
                bump.update(l for l in adj[k] if first[l])
        idx = np.array(sorted(bump), dtype=np.int64)
        # a zero shift cannot be doubled; seed it from the eigenvalue bound
        seed = GERSHGORIN_MARGIN * gershgorin_bound(self.local.A[idx], dm.local_mask[idx])
        lam[idx] = np.where(lam[idx] > 0, 2.0 * lam[idx], seed)
        log.debug("doubling shift on %d cell(s)", len(idx))
        return SignData(signs.C, shift_from_partition(dm, first, lam), lam, first)

    def rhs(self, r_local=None, g=None) -> np.ndarray:
        """Assembled ``S`` for local momentum data ``r`` and constraint data ``g``."""
        r = self._r(r_local)
        g = self._g(g)
        s = np.einsum("kab,kb->ka", self.Gk, r)
        s += np.where(self._not_gauge[:, None], self.AinvD * (g / self._Bs)[:, None], 0.0)
        s *= self.C
        return assemble_vector(self.dofmap, s)

    def _r(self, r_local):
        r = self.local.rhs if r_local is None else r_local
        return np.where(self.dofmap.local_mask, r, 0.0)

    def _g(self, g):
        g = self.local.g if g is None else np.asarray(g, dtype=float)
        return np.where(self._not_gauge, g, 0.0)

    def recover(self, W, r_local=None, g=None, check_rtol: float | None = 1e-6):
        """Velocity unknowns and pressures (gauge cell excluded) from ``W``.

        The two cell copies of each face velocity agree up to the error in
        ``W`` amplified by the conditioning of ``G``; ``copy_gap`` records
        the largest difference and ``check_rtol`` (``None`` to skip) bounds it.
        """
        dm = self.dofmap
        r = self._r(r_local)
        g = self._g(g)
        Wl = np.where(dm.local_mask, np.asarray(W)[np.maximum(dm.cell_dofs, 0)], 0.0)
        y = r - self.C * Wl
        P = np.where(self._not_gauge, ((self.DAinv * y).sum(axis=1) - g) / self._Bs, 0.0)
        Uh = np.einsum("kab,kb->ka", self.Ainv, y - self.D * P[:, None])
        self.U_copies = Uh
        U = np.zeros(dm.n_velocity)
        m = dm.local_mask
        # per face the lower-indexed cell carries the +1 sign
        lower = m & (self.C > 0)
        U[dm.cell_dofs[lower]] = Uh[lower]
        upper = m & (self.C < 0)
        gap = np.abs(Uh[upper] - U[dm.cell_dofs[upper]])
        self.copy_gap = float(gap.max()) if gap.size else 0.0
        # the velocity may vanish by cancellation (well-balanced forces), so
        # measure the gap against the size of A^{-1} y as well
        ref = float(np.abs(np.einsum("kab,kb->ka", self.Ainv, y)).max()) if y.size else 0.0
        scale = max(float(np.abs(U).max()) if U.size else 0.0, ref, np.finfo(float).tiny)
        self.copy_gap_rel = self.copy_gap / scale
        if check_rtol is not None and self.copy_gap > check_rtol * scale:
            raise HybridError(
                f"cell copies of the velocity disagree by {self.copy_gap:.3e} (scale {scale:.3e})"
            )
        return U, P[dm.cell_pressure >= 0]

    def symmetry_defect(self) -> float:
        G = self.G
        top = abs(G).max()
        return float(abs(G - G.T).max() / top) if top > 0 else 0.0


def assemble_hybrid(local: LocalSystem, mu: float, signs: SignData | None = None) -> HybridSystem:
    return HybridSystem(local, mu, signs)


def solve_hybrid(local: LocalSystem, mu: float, solve, signs: SignData | None = None):
    """Three-step hybrid method: build ``G`` and ``S``, solve, recover ``(U, P)``.

    ``solve(G, S)`` is any linear solver returning ``W`` (optionally with a
    report as a tuple).
    """
    hyb = HybridSystem(local, mu, signs)
    out = solve(hyb.G, hyb.rhs())
    W, report = out if isinstance(out, tuple) else (out, None)
    U, P = hyb.recover(W)
    return U, P, hyb, report


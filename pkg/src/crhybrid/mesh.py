"""Conforming simplicial meshes (triangles, tetrahedra) with face connectivity.

Local face ``j`` of a cell is the face opposite local vertex ``j``; after
construction the per-cell face slots are reordered by ascending global face
index, and :attr:`SimplicialMesh.opposite` keeps track of the opposite vertex
of every slot.
"""
from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input (non-manifold faces, degenerate cells, bad file)."""


class SimplicialMesh:
    """Immutable simplicial mesh with all geometric quantities precomputed.

    Attributes
    ----------
    dim : int
        Space dimension (2 or 3).
    vertices : (nv, dim) float array
    cells : (nc, dim+1) int array
    faces : (nf, dim) int array
        Sorted vertex tuples, globally in lexicographic order.
    cell_faces : (nc, dim+1) int array
        Face indices of each cell, ascending.
    opposite : (nc, dim+1) int array
        Vertex of the cell not on the corresponding face.
    face_cells : (nf, 2) int array
        Incident cells, smaller index first; ``-1`` in column 1 on the boundary.
    boundary : (nf,) bool array
    volumes, centroids, face_areas, face_centroids
    area_vectors : (nc, dim+1, dim) float array
        Outward area vectors ``|sigma| n_{K,sigma}`` aligned with ``cell_faces``.
    """

    def __init__(self, vertices, cells):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must be an (nv, d) array with d in {2, 3}")
        dim = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise MeshError(f"cells must have {dim + 1} vertices in dimension {dim}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell references a vertex index out of range")
        if len(np.unique(np.sort(cells, axis=1), axis=0)) != len(cells):
            # a repeated cell makes every one of its faces have >2 cells
            raise MeshError("non-manifold input: duplicate cell")

        self.dim = dim
        self.vertices = vertices
        self.cells = cells
        nc = len(cells)

        # barycentric gradients from the affine map x = x0 + J xi
        x = vertices[cells]
        jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
        det = np.linalg.det(jac)
        vol = np.abs(det) / math.factorial(dim)
        scale = np.max(np.abs(jac), axis=(1, 2)) ** dim
        bad = np.flatnonzero(vol <= 1e-14 * scale)
        if bad.size:
            raise MeshError(f"zero-volume cell(s): {bad[:10].tolist()}")
        inv = np.linalg.inv(jac)
        grads = np.empty((nc, dim + 1, dim))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        # a_{K,j} = -d |K| grad(lambda_j)
        area_vec = -dim * vol[:, None, None] * grads

        # local face j = all vertices except j
        local = np.array(
            [[k for k in range(dim + 1) if k != j] for j in range(dim + 1)]
        )
        lf = np.sort(cells[:, local], axis=2).reshape(-1, dim)
        faces, inverse, counts = np.unique(
            lf, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(nc, dim + 1)
        if np.any(counts > 2):
            f = np.flatnonzero(counts > 2)[0]
            raise MeshError(
                f"non-manifold input: face {faces[f].tolist()} has {counts[f]} cells"
            )

        order = np.argsort(inverse, axis=1, kind="stable")
        rows = np.arange(nc)[:, None]
        self.cell_faces = inverse[rows, order]
        self.opposite = cells[rows, order]
        self.area_vectors = area_vec[rows, order]
        self.faces = faces
        self.volumes = vol
        self.centroids = x.mean(axis=1)

        nf = len(faces)
        face_cells = np.full((nf, 2), -1, dtype=np.int64)
        flat_f = self.cell_faces.ravel()
        flat_c = np.repeat(np.arange(nc), dim + 1)
        srt = np.lexsort((flat_c, flat_f))
        flat_f, flat_c = flat_f[srt], flat_c[srt]
        first = np.ones(len(flat_f), dtype=bool)
        first[1:] = flat_f[1:] != flat_f[:-1]
        face_cells[flat_f[first], 0] = flat_c[first]
        face_cells[flat_f[~first], 1] = flat_c[~first]
        self.face_cells = face_cells
        self.boundary = face_cells[:, 1] < 0

        fx = vertices[faces]
        self.face_centroids = fx.mean(axis=1)
        if dim == 2:
            self.face_areas = np.linalg.norm(fx[:, 1] - fx[:, 0], axis=1)
        else:
            self.face_areas = 0.5 * np.linalg.norm(
                np.cross(fx[:, 1] - fx[:, 0], fx[:, 2] - fx[:, 0]), axis=1
            )

        for arr in (
            self.vertices, self.cells, self.faces, self.cell_faces, self.opposite,
            self.face_cells, self.boundary, self.volumes, self.centroids,
            self.face_areas, self.face_centroids, self.area_vectors,
        ):
            arr.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def h(self) -> float:
        """Mesh size: largest cell diameter."""
        x = self.vertices[self.cells]
        diam = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            diam = max(diam, float(np.linalg.norm(x[:, i] - x[:, j], axis=1).max()))
        return diam

    def cell_adjacency(self) -> list[list[int]]:
        """Neighbour lists through interior faces."""
        adj: list[list[int]] = [[] for _ in range(self.n_cells)]
        for k, l in self.face_cells[~self.boundary]:
            adj[k].append(int(l))
            adj[l].append(int(k))
        return [sorted(a) for a in adj]

    def slot_of(self, cell: int, face: int) -> int:
        slots = np.flatnonzero(self.cell_faces[cell] == face)
        if not slots.size:
            raise MeshError(f"face {face} is not a face of cell {cell}")
        return int(slots[0])

    def contains(self, cell: int, x, tol: float = 1e-12) -> bool:
        """Whether ``x`` lies in the closure of ``cell`` (barycentric test)."""
        lam = self.barycentric(cell, x)
        return bool(np.all(lam >= -tol))

    def barycentric(self, cell: int, x) -> np.ndarray:
        """Barycentric coordinates of ``x`` ordered like the cell's face slots."""
        x = np.asarray(x, dtype=float)
        a = self.area_vectors[cell]
        # lambda_j = (x - s_j) . grad(lambda_j) + 1 with grad(lambda_j) = -a_j/(d|K|)
        s = self.vertices[self.opposite[cell]]
        return 1.0 - ((x - s) * a).sum(axis=1) / (self.dim * self.volumes[cell])

    def check(self, rtol: float = 1e-12) -> None:
        """Raise :class:`MeshError` if a geometric invariant is violated."""
        a = self.area_vectors
        closure = np.linalg.norm(a.sum(axis=1), axis=1)
        if np.any(closure > rtol * np.linalg.norm(a, axis=2).sum(axis=1)):
            raise MeshError("area vectors of a cell do not sum to zero")
        k, l = self.face_cells[~self.boundary].T
        f = np.flatnonzero(~self.boundary)
        ak = a[k, _slots(self.cell_faces, k, f)]
        al = a[l, _slots(self.cell_faces, l, f)]
        if np.any(np.linalg.norm(ak + al, axis=1) > rtol * np.linalg.norm(ak, axis=1)):
            raise MeshError("area vectors of an interior face are not opposite")


def _slots(cell_faces, cells, faces):
    """Slot index of ``faces[i]`` inside ``cells[i]`` (vectorized)."""
    return np.argmax(cell_faces[cells] == faces[:, None], axis=1)


def build_connectivity(cells, vertices) -> SimplicialMesh:
    """Build a mesh from raw cell/vertex arrays."""
    return SimplicialMesh(vertices, cells)


def build_unit_square_mesh(n: int) -> SimplicialMesh:
    """``n x n`` squares split along the lower-left to upper-right diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (i + (n + 1) * j).ravel()
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])
    return SimplicialMesh(vertices, cells)


def build_unit_cube_mesh(n: int) -> SimplicialMesh:
    """``n^3`` cubes, each split into the 6 Kuhn tetrahedra of its main diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy, zz = np.meshgrid(g, g, g, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    i, j, k = (a.ravel() for a in np.meshgrid(*(np.arange(n),) * 3, indexing="ij"))
    unit = np.eye(3, dtype=np.int64)
    cells = []
    for perm in itertools.permutations(range(3)):
        p = np.zeros(3, dtype=np.int64)
        path = [p.copy()]
        for axis in perm:
            p = p + unit[axis]
            path.append(p.copy())
        cells.append(np.column_stack([vid(i + q[0], j + q[1], k + q[2]) for q in path]))
    cells = np.stack(cells, axis=1).reshape(-1, 4)
    return SimplicialMesh(vertices, cells)


def write_mesh(mesh: SimplicialMesh, path) -> None:
    """Write the plain-text format: ``dim nv nc``, coordinates, cells (0-based)."""
    lines = [f"{mesh.dim} {len(mesh.vertices)} {mesh.n_cells}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SimplicialMesh:
    tokens = Path(path).read_text().split()
    try:
        dim, nv, nc = (int(t) for t in tokens[:3])
    except ValueError as exc:
        raise MeshError(f"malformed header in {path}") from exc
    if dim not in (2, 3):
        raise MeshError(f"unsupported dimension {dim}")
    need = 3 + nv * dim + nc * (dim + 1)
    if len(tokens) != need:
        raise MeshError(f"expected {need} tokens, found {len(tokens)}")
    body = tokens[3:]
    try:
        vertices = np.array(body[: nv * dim], dtype=float).reshape(nv, dim)
        cells = np.array(body[nv * dim :], dtype=np.int64).reshape(nc, dim + 1)
    except ValueError as exc:
        raise MeshError(f"malformed entry in {path}") from exc
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise MeshError(f"cell vertex index out of range (nv = {nv})")
    return SimplicialMesh(vertices, cells)

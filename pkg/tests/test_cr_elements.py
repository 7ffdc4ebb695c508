import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crhybrid.cr_elements import (
    DofMap,
    apply_dirichlet,
    build_local_blocks,
    cell_average,
    cr_gradient,
    divergence_vectors,
    eval_velocity,
    local_divergence,
    local_rhs,
    local_velocity_matrix,
    rt_reconstruct,
    velocity_matrices,
)
from crhybrid.mesh import MeshError, SimplicialMesh, build_unit_cube_mesh, build_unit_square_mesh

TRI = SimplicialMesh([[0, 0], [1, 0], [1, 1.0]], [[0, 1, 2]])


def diagonal_slot(mesh, cell=0):
    # face opposite vertex (1, 0)
    return int(np.flatnonzero(np.all(mesh.vertices[mesh.opposite[cell]] == [1, 0], axis=1))[0])


def test_gradient_on_diagonal_face():
    s = diagonal_slot(TRI)
    g = cr_gradient(TRI, 0, TRI.cell_faces[0, s])
    assert np.allclose(g, [-2, 2])


def test_gradient_basis_means():
    # phi is affine, so its edge mean is its value at the edge midpoint
    s = diagonal_slot(TRI)
    x0 = TRI.face_centroids[TRI.cell_faces[0, s]]
    g = cr_gradient(TRI, 0, TRI.cell_faces[0, s])
    for t in range(3):
        xt = TRI.face_centroids[TRI.cell_faces[0, t]]
        assert np.isclose(1 + g @ (xt - x0), 1.0 if t == s else 0.0)


def test_gradient_errors_and_sum():
    m = build_unit_square_mesh(2)
    with pytest.raises(MeshError):
        cr_gradient(m, 0, int(np.setdiff1d(np.arange(m.n_faces), m.cell_faces[0])[0]))
    gsum = sum(cr_gradient(m, 3, f) for f in m.cell_faces[3])
    assert np.allclose(gsum, 0)


def test_gradient_scaling():
    big = SimplicialMesh(2 * TRI.vertices, TRI.cells)
    f = TRI.cell_faces[0, 0]
    assert np.allclose(cr_gradient(big, 0, f), cr_gradient(TRI, 0, f) / 2)


def test_mass_part_of_local_matrix():
    S = velocity_matrices(TRI, 1.0, 0.0)[0]
    assert np.allclose(S, np.eye(3) / 6)


def test_local_matrix_restricted_and_kernel():
    m = build_unit_square_mesh(3)
    S = velocity_matrices(m, 0.0, 0.7)
    assert np.abs(S - S.transpose(0, 2, 1)).max() == 0.0
    # constants in the kernel of the stiffness part
    assert np.abs(S.sum(axis=2)).max() < 1e-13
    k = int(np.flatnonzero(~m.boundary[m.cell_faces].any(axis=1))[0])
    assert local_velocity_matrix(m, k, 0.0, 1.0).shape == (3, 3)
    assert local_velocity_matrix(m, 0, 0.0, 1.0).shape == (int((~m.boundary[m.cell_faces[0]]).sum()),) * 2
    with pytest.raises(ValueError):
        local_velocity_matrix(m, 0, -1.0, 1.0)
    with pytest.raises(ValueError):
        local_velocity_matrix(m, 0, 1.0, 0.0)


@pytest.mark.parametrize("mesh", [build_unit_square_mesh(3), build_unit_cube_mesh(2)])
def test_positive_definite_with_mass(mesh):
    S = velocity_matrices(mesh, 5.0, 0.3)
    assert np.linalg.eigvalsh(S).min() > 0
    S0 = velocity_matrices(mesh, 0.0, 0.3)
    assert np.linalg.eigvalsh(S0).min() > -1e-13


def test_divergence_entries():
    D = divergence_vectors(TRI)[0].reshape(3, 2)
    s = int(np.flatnonzero(np.all(np.isclose(TRI.area_vectors[0], [0, -1]), axis=1))[0])
    assert np.allclose(D[s], [0, 1])
    m = build_unit_square_mesh(2)
    for k in range(m.n_cells):
        dk = local_divergence(m, k)
        assert len(dk) == 2 * (~m.boundary[m.cell_faces[k]]).sum()
        assert np.any(dk != 0)
    # a constant velocity on all faces has zero divergence in every cell
    c = np.array([0.3, -1.2])
    Dall = divergence_vectors(m).reshape(m.n_cells, 3, 2)
    assert np.allclose((Dall @ c).sum(axis=1), 0)


def test_rhs_entries_on_diagonal_face():
    s = diagonal_slot(TRI)
    R = local_rhs(TRI, 0, [1.0, 0.0])
    # single-cell mesh: every face is boundary, so restrict by hand
    assert R.size == 0
    from crhybrid.cr_elements import rhs_vectors

    full = rhs_vectors(TRI, np.array([[1.0, 0.0]]))[0].reshape(3, 2)
    assert np.allclose(full[s], [1 / 6, -1 / 6])
    assert np.allclose(rhs_vectors(TRI, np.zeros((1, 2))), 0)


def test_rhs_is_force_against_rt_lift():
    # R_K . V = fbar_K . integral of RT(V) over K = |K| fbar_K . RT(V)(x_K)
    m = build_unit_cube_mesh(1)
    rng = np.random.default_rng(1)
    from crhybrid.cr_elements import rhs_vectors

    fbar = rng.standard_normal((m.n_cells, 3))
    R = rhs_vectors(m, fbar).reshape(m.n_cells, 4, 3)
    for k in range(m.n_cells):
        V = rng.standard_normal((4, 3))
        field, _ = rt_reconstruct(m, k, V)
        assert np.isclose((R[k] * V).sum(), m.volumes[k] * fbar[k] @ field(m.centroids[k]))


def test_rt_reconstruction():
    m = build_unit_cube_mesh(1)
    c = np.array([0.2, -0.5, 1.1])
    field, div = rt_reconstruct(m, 2, np.tile(c, (4, 1)))
    xs = np.vstack([m.centroids[2], m.vertices[m.cells[2]]])
    assert np.allclose(field(xs), c)
    assert abs(div) < 1e-14
    a = m.area_vectors[2]
    # zero fluxes give the zero field
    V = np.array([np.cross(ai, [1.0, 2.0, 3.0]) for ai in a])
    field0, div0 = rt_reconstruct(m, 2, V)
    assert np.allclose(field0(xs), 0)
    # normal component at each face centroid equals V_sigma . n
    rng = np.random.default_rng(3)
    V = rng.standard_normal((4, 3))
    field, div = rt_reconstruct(m, 2, V)
    for s in range(4):
        xc = m.face_centroids[m.cell_faces[2, s]]
        assert np.isclose(field(xc) @ a[s], V[s] @ a[s])
    assert np.isclose(div, (V * a).sum() / m.volumes[2])


def test_eval_velocity():
    m = build_unit_square_mesh(2)
    rng = np.random.default_rng(0)
    U = rng.standard_normal((m.n_faces, 2))
    k = 5
    for f in m.cell_faces[k]:
        assert np.allclose(eval_velocity(m, U, k, m.face_centroids[f]), U[f])
    assert np.allclose(eval_velocity(m, U, k, m.centroids[k]), U[m.cell_faces[k]].mean(axis=0))
    Uc = np.tile([2.0, -3.0], (m.n_faces, 1))
    assert np.allclose(eval_velocity(m, Uc, k, m.vertices[m.cells[k, 0]]), [2, -3])
    with pytest.raises(ValueError, match="outside"):
        eval_velocity(m, U, k, [10.0, 10.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_affine_gradient_consistency(coef):
    m = build_unit_square_mesh(3)
    g = np.array(coef[:2])

    def ell(x):
        return x @ g + coef[2]

    vals = ell(m.face_centroids)
    grads = (vals[m.cell_faces][:, :, None] * m.area_vectors).sum(axis=1) / m.volumes[:, None]
    assert np.allclose(grads, g, atol=1e-12 * (1 + np.abs(g).max()))


def test_cell_average_exact_for_quadratics():
    m = build_unit_square_mesh(2)

    def f(x, t):
        return np.column_stack([x[:, 0] ** 2, x[:, 0] * x[:, 1] + 1])

    avg = cell_average(m, f)
    # reference from a fine subdivision of each triangle
    rng = np.random.default_rng(0)
    lam = rng.dirichlet(np.ones(3), size=200000)
    for k in (0, 5):
        pts = lam @ m.vertices[m.cells[k]]
        assert np.allclose(avg[k], f(pts, 0).mean(axis=0), atol=5e-3)
    m3 = build_unit_cube_mesh(1)

    def g(x, t):
        return np.column_stack([x[:, 0] * x[:, 2], x[:, 1] ** 2, np.ones(len(x))])

    # integral of x z and y^2 over the cube: 1/4 and 1/3
    tot = (cell_average(m3, g) * m3.volumes[:, None]).sum(axis=0)
    assert np.allclose(tot, [0.25, 1 / 3, 1.0])


def test_cell_average_exact_2d_integral():
    m = build_unit_square_mesh(3)

    def f(x, t):
        return np.column_stack([x[:, 0] * x[:, 1], x[:, 1] ** 2 - t])

    tot = (cell_average(m, f, t=2.0) * m.volumes[:, None]).sum(axis=0)
    assert np.allclose(tot, [0.25, 1 / 3 - 2.0])


def test_apply_dirichlet():
    m = build_unit_square_mesh(2)
    dm = DofMap(m)
    blocks = build_local_blocks(m, 1.0, 1.0)
    R, g = apply_dirichlet(blocks, dm, np.zeros((m.n_faces, 2)))
    assert np.allclose(R, 0) and np.allclose(g, 0)

    c = np.array([0.4, -0.9])
    UD = np.tile(c, (m.n_faces, 1))
    R, g = apply_dirichlet(blocks, dm, UD)
    ext = m.boundary[m.cell_faces]
    a = m.area_vectors
    # g_K is what D U must equal: sum over exterior faces of U^D . a
    sum_ext = (a * ext[:, :, None]).sum(axis=1) @ c
    assert np.allclose(g, sum_ext)
    assert np.allclose(g, -((a * ~ext[:, :, None]).sum(axis=1) @ c))
    assert np.all(R[~dm.local_mask] == 0)
    inner = ~ext.any(axis=1)
    assert np.allclose(g[inner], 0) and np.allclose(R[inner], 0)


def test_dofmap_counts():
    m = build_unit_cube_mesh(2)
    dm = DofMap(m, gauge_cell=3)
    assert dm.n_velocity == 3 * len(m.interior_faces)
    assert dm.n_pressure == m.n_cells - 1
    counts = np.bincount(dm.cell_dofs[dm.local_mask], minlength=dm.n_velocity)
    assert np.all(counts == 2)
    p = np.arange(m.n_cells, dtype=float)
    assert np.allclose(dm.pressure_cells(dm.pressure_vector(p)), p - 3)


def test_build_local_blocks_rejects_bad_force():
    m = build_unit_square_mesh(1)
    with pytest.raises(ValueError):
        build_local_blocks(m, 1.0, 1.0, np.full((2, 2), np.nan))

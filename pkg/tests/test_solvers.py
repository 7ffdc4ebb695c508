import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from crhybrid.assembly import Discretization
from crhybrid.hybrid import HybridSystem
from crhybrid.mesh import build_unit_square_mesh
from crhybrid.solvers import (
    ILU,
    DirectLU,
    Jacobi,
    LinearSolver,
    SingularMatrixError,
    SolverConfig,
    ZeroPivotError,
    backends,
    bicgstab,
    cg,
    direct_lu,
    gmres,
    make_preconditioner,
    solve,
)


def random_spd(n, rng, density=0.1):
    X = sp.random(n, n, density=density, random_state=np.random.RandomState(0))
    return sp.csr_matrix(X @ X.T + n * sp.eye(n))


def stokes_matrices(n=4, mu=0.0):
    m = build_unit_square_mesh(n)
    rng = np.random.default_rng(5)
    disc = Discretization(m, mu, 1.0, convective=False)
    src = disc.force_rhs(rng.standard_normal((m.n_cells, 2)))
    loc = disc.linearize(np.zeros((m.n_faces, 2)), np.zeros(m.n_cells), src)
    sysm = loc.coupled()
    hyb = HybridSystem(loc, mu)
    return sysm.matrix, sysm.rhs, hyb.G, hyb.rhs()


# ---------------------------------------------------------------- direct

def test_direct_identity_and_pivoting():
    b = np.array([3.0, -1.0, 2.0])
    x, rep = direct_lu(sp.eye(3), b)
    assert np.allclose(x, b) and rep.converged and rep.iterations == 0
    assert len(rep.history) == rep.iterations + 1
    x, _ = direct_lu(sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]]), [1.0, 2.0])
    assert np.allclose(x, [2, 1])


def test_direct_spd_residual(rng):
    A = random_spd(50, rng)
    b = rng.standard_normal(50)
    for ordering in ("natural", "colamd"):
        x, rep = direct_lu(A, b, ordering)
        assert rep.residual <= 1e-12
        assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_direct_singular():
    with pytest.raises(SingularMatrixError):
        DirectLU(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        DirectLU(sp.eye(2), ordering="bogus")


# ---------------------------------------------------------------- krylov

def test_cg_diagonal_exact():
    A = sp.diags([1.0, 2.0, 3.0, 4.0])
    b = np.ones(4)
    x, rep = cg(A, b, tol=1e-14)
    assert rep.converged and rep.iterations <= 4
    assert np.allclose(x, 1 / np.arange(1, 5))
    assert rep.criterion == "preconditioned"
    assert len(rep.history) == rep.iterations + 1


def test_cg_true_residual_close_to_tolerance(rng):
    A = random_spd(80, rng)
    b = rng.standard_normal(80)
    x, rep = cg(A, b, Jacobi(A), tol=1e-10)
    assert rep.converged
    assert rep.true_residual(A, x, b) <= 10 * 1e-10


def test_jacobi_reduces_iterations_on_graded_diagonal():
    A = sp.diags(np.arange(1.0, 1001.0)) + sp.diags(np.full(999, 0.3), 1) + sp.diags(np.full(999, 0.3), -1)
    b = np.ones(1000)
    _, plain = cg(A, b, tol=1e-10)
    _, jac = cg(A, b, Jacobi(A), tol=1e-10)
    assert plain.converged and jac.converged
    assert jac.iterations <= plain.iterations


def test_jacobi_apply():
    J = Jacobi(sp.diags([2.0, 4.0]))
    assert np.allclose(J.solve(np.array([2.0, 4.0])), [1, 1])
    assert np.allclose(Jacobi(sp.eye(3)).solve(np.arange(3.0)), np.arange(3.0))
    with pytest.raises(ZeroPivotError):
        Jacobi(sp.csr_matrix([[0.0, 1.0], [1.0, 2.0]]))


def test_cg_breaks_down_on_saddle_matrix():
    M, b, G, S = stokes_matrices(4, mu=10.0)
    _, rep = cg(M, b, tol=1e-10)
    assert not rep.converged
    assert rep.breakdown == "indefinite" or rep.iterations == 10 * M.shape[0]
    x, rep = cg(G, S, Jacobi(G), tol=1e-10)
    assert rep.converged and rep.breakdown is None


def test_bicgstab_small_cases():
    x, rep = bicgstab(sp.eye(5), np.arange(1.0, 6.0))
    assert rep.converged and rep.iterations == 1
    x, rep = bicgstab(sp.csr_matrix([[2.0, 1.0], [0.0, 1.0]]), np.array([3.0, 1.0]), tol=1e-12)
    assert rep.converged and np.allclose(x, [1, 1])


def test_bicgstab_coupled_stokes_with_ilu2():
    M, b, _, _ = stokes_matrices(4, mu=0.0)
    x, rep = bicgstab(M, b, ILU(M, 2), tol=1e-10)
    xd, _ = direct_lu(M, b)
    assert rep.converged
    assert np.abs(x - xd).max() <= 1e-7 * np.abs(xd).max()
    assert rep.true_residual(M, x, b) <= 10 * rep.residual + 1e-15


def test_gmres_identity_and_monotone_cycle(rng):
    x, rep = gmres(sp.eye(4), np.ones(4))
    assert rep.converged and rep.iterations == 1
    A = sp.csr_matrix(rng.standard_normal((60, 60)) + 12 * np.eye(60))
    b = rng.standard_normal(60)
    x, rep = gmres(A, b, tol=1e-12, restart=20)
    h = np.array(rep.history)
    for c in range(0, len(h) - 1, 20):
        cyc = h[c : c + 21]
        assert np.all(np.diff(cyc[:-1]) <= 1e-12)
    assert rep.converged and rep.true_residual(A, x, b) <= 1e-11


def test_gmres_hybrid_steady_stokes_with_ilu2():
    _, _, G, S = stokes_matrices(4, mu=0.0)
    x, rep = gmres(G, S, ILU(G, 2), tol=1e-11)
    xd, _ = direct_lu(G, S)
    assert rep.converged
    assert np.abs(x - xd).max() <= 1e-7 * np.abs(xd).max()


def test_gmres_reports_stagnation():
    # a rotation: GMRES(1) makes no progress
    A = sp.csr_matrix([[0.0, 1.0], [-1.0, 0.0]])
    _, rep = gmres(A, np.array([1.0, 0.0]), restart=1, maxiter=10)
    assert not rep.converged and rep.breakdown == "stagnation"


# ---------------------------------------------------------------- ILU

def test_ilu_diagonal_is_exact():
    A = sp.diags([2.0, -3.0, 5.0])
    for k in (0, 3):
        f = ILU(A, k)
        L, U = f.factors()
        assert np.allclose((L @ U).toarray(), A.toarray())


def test_ilu0_tridiagonal_equals_lu(rng):
    n = 30
    A = sp.diags([rng.uniform(-1, 1, n - 1), 4 + rng.uniform(0, 1, n), rng.uniform(-1, 1, n - 1)], [-1, 0, 1])
    L, U = ILU(A, 0).factors()
    P, Ld, Ud = la.lu(A.toarray())
    assert np.allclose(P, np.eye(n))
    assert np.allclose(L.toarray(), Ld) and np.allclose(U.toarray(), Ud)


def test_ilu_full_fill_is_complete_lu():
    M, b, _, _ = stokes_matrices(2, mu=10.0)
    f = ILU(M, 8)
    L, U = f.factors()
    assert np.abs((L @ U - M).toarray()).max() <= 1e-12 * abs(M).max()
    x, rep = gmres(M, b, f, tol=1e-10)
    assert rep.converged and rep.iterations <= 2


def test_ilu0_matches_on_pattern(rng):
    A = random_spd(40, rng, density=0.08)
    f = ILU(A, 0)
    L, U = f.factors()
    E = (L @ U - A).tocsr()
    on_pattern = E.multiply(A != 0)
    assert abs(on_pattern).max() <= 1e-12 * abs(A).max()


def test_ilu_pattern_monotone():
    M, _, G, _ = stokes_matrices(3, mu=10.0)
    for A in (M, G):
        prev = None
        for k in range(4):
            p = ILU(A, k).pattern()
            if prev is not None:
                assert (prev - prev.multiply(p)).nnz == 0
            prev = p


def test_ilu_backends_agree():
    M, b, G, S = stokes_matrices(3, mu=10.0)
    bk = backends()
    if len(bk) < 2:
        pytest.skip("compiled backend not built")
    for A in (M, G):
        fp, fc = ILU(A, 2, backend="python"), ILU(A, 2, backend="cython")
        assert np.array_equal(fp.indices, fc.indices)
        assert np.allclose(fp.data, fc.data, rtol=1e-14, atol=0)
        r = np.linspace(-1, 1, A.shape[0])
        assert np.allclose(fp.solve(r), fc.solve(r))


def test_ilu_zero_pivot():
    A = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ZeroPivotError) as err:
        ILU(A, 0)
    assert err.value.row == 0
    with pytest.raises(ValueError):
        ILU(sp.eye(2), -1)


def test_make_preconditioner_names():
    A = sp.eye(3, format="csr")
    assert make_preconditioner(A, "none").name == "none"
    assert make_preconditioner(A, "jacobi").name == "jacobi"
    assert make_preconditioner(A, "ILU4").fill == 4
    with pytest.raises(ValueError):
        make_preconditioner(A, "ilu9")
    with pytest.raises(ValueError):
        make_preconditioner(A, "amg")


# ---------------------------------------------------------------- front end

def test_solver_config_validation():
    assert SolverConfig("direct-lu").method == "lu"
    assert SolverConfig("lu").label == "direct-lu"
    for bad in (dict(method="qmr"), dict(tol=0.0), dict(restart=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


@pytest.mark.parametrize("cfg", [
    SolverConfig("cg", precond="ilu0", tol=1e-12),
    SolverConfig("bicgstab", precond="jacobi", tol=1e-12),
    SolverConfig("gmres", precond="ilu1", tol=1e-12),
])
def test_iterative_agrees_with_direct(cfg):
    _, _, G, S = stokes_matrices(4, mu=10.0)
    xd, _ = solve(G, S)
    x, rep = solve(G, S, cfg)
    assert rep.converged
    assert np.abs(x - xd).max() <= 1e-7 * np.abs(xd).max()
    assert rep.true_residual(G, x, S) <= 10 * max(rep.residual, 1e-12)
    assert rep.wall_time > 0


def test_linear_solver_reuses_setup(rng):
    A = random_spd(30, rng)
    ls = LinearSolver(A, SolverConfig("cg", precond="ilu0"))
    M = ls.M
    for _ in range(3):
        x, rep = ls.solve(rng.standard_normal(30))
        assert rep.converged
    assert ls.M is M and ls.setup_time >= 0


def test_pure_python_fallback_is_selectable():
    import os
    import subprocess
    import sys

    env = dict(os.environ, CRHYBRID_PURE_PYTHON="1")
    code = "from crhybrid.solvers import BACKEND, backends; print(BACKEND, sorted(backends()))"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.split()[0] == "python"

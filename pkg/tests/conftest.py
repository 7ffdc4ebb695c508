import numpy as np
import pytest
import scipy.sparse.linalg as spla

from crhybrid.assembly import Discretization
from crhybrid.hybrid import HybridSystem
from crhybrid.mesh import build_unit_cube_mesh, build_unit_square_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def square4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def square8():
    return build_unit_square_mesh(8)


@pytest.fixture(scope="session")
def cube2():
    return build_unit_cube_mesh(2)


def linearized_system(mesh, mu, convective, inhomogeneous, rng, nu=1.0):
    """Newton system at a random state with random force and boundary data."""
    disc = Discretization(mesh, mu, nu, convective)
    U = np.zeros((mesh.n_faces, mesh.dim))
    if inhomogeneous:
        U[mesh.boundary] = rng.standard_normal((mesh.boundary.sum(), mesh.dim))
    if convective:
        U[~mesh.boundary] = rng.standard_normal(((~mesh.boundary).sum(), mesh.dim))
    P = rng.standard_normal(mesh.n_cells)
    fbar = rng.standard_normal((mesh.n_cells, mesh.dim))
    u_prev = rng.standard_normal((mesh.n_faces, mesh.dim)) if mu > 0 else None
    source = disc.force_rhs(fbar, u_prev)
    return disc, disc.linearize(U, P, source)


def coupled_solution(loc):
    sysm = loc.coupled()
    x = spla.spsolve(sysm.matrix.tocsc(), sysm.rhs)
    n = loc.dofmap.n_velocity
    return x[:n], x[n:]


def hybrid_solution(loc, mu):
    hyb = HybridSystem(loc, mu)
    W = spla.spsolve(hyb.G.tocsc(), hyb.rhs())
    U, P = hyb.recover(W)
    return U, P, hyb


@pytest.fixture
def make_system():
    return linearized_system


@pytest.fixture
def solve_coupled():
    return coupled_solution


@pytest.fixture
def solve_hybrid():
    return hybrid_solution


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import math

import numpy as np
import pytest

from crhybrid import driver
from crhybrid.driver import (
    ProblemConfig,
    compute_errors,
    convergence_ratios,
    convergence_study,
    expand_plan,
    fmt,
    lid_driven_cavity_config,
    read_plan,
    run,
    steps_for,
    well_balanced_test,
    zero_mean,
)
from crhybrid.mesh import build_unit_square_mesh
from crhybrid.problems import constant_force_solution, green_taylor, green_taylor_solution, lid_velocity
from crhybrid.solvers import SolverConfig


def test_green_taylor_values():
    u, p = green_taylor(np.array([[0.0, 0.0]]), 0.0, 100.0)
    assert np.allclose(u, [[0.0, -100.0]]) and np.allclose(p, 0.0)
    x = np.random.default_rng(0).uniform(size=(20, 2))
    u1, p1 = green_taylor(x, 0.01, 100.0)
    u0, p0 = green_taylor(x, 0.0, 100.0)
    assert np.allclose(u1, u0 * np.exp(-8 * np.pi**2 * 0.01))
    assert np.allclose(p1, p0 * np.exp(-16 * np.pi**2 * 0.01))
    u3, p3 = green_taylor(np.column_stack([x, x[:, 0]]), 0.0, 100.0, dim=3, stokes=True)
    assert np.allclose(u3[:, :2], u0) and np.all(u3[:, 2] == 0) and np.all(p3 == 0)
    with pytest.raises(ValueError):
        green_taylor(x, 0.0, 1.0, dim=4)


def test_green_taylor_is_divergence_free():
    x = np.random.default_rng(1).uniform(size=(10, 2))
    h = 1e-6
    ux = (green_taylor(x + [h, 0], 0, 1.0)[0][:, 0] - green_taylor(x - [h, 0], 0, 1.0)[0][:, 0]) / (2 * h)
    vy = (green_taylor(x + [0, h], 0, 1.0)[0][:, 1] - green_taylor(x - [0, h], 0, 1.0)[0][:, 1]) / (2 * h)
    assert np.abs(ux + vy).max() < 1e-6


def test_lid_velocity():
    sol = lid_velocity(2)
    u = sol.velocity(np.array([[0.5, 1.0], [0.5, 0.0], [1.0, 0.5]]), 0.0)
    assert np.allclose(u, [[1, 0], [0, 0], [0, 0]])
    assert not sol.exact


def test_zero_mean_and_ratios():
    m = build_unit_square_mesh(3)
    P = zero_mean(m, np.arange(m.n_cells, dtype=float))
    assert abs(m.volumes @ P) < 1e-14
    r = convergence_ratios([0.240, 0.0608])
    assert r[0] is None and math.isclose(r[1], 1.98, abs_tol=0.005)
    assert convergence_ratios([1.0, 1.0])[1] == 0.0


def test_compute_errors_properties():
    m = build_unit_square_mesh(4)
    sol = green_taylor_solution(1.0)
    U = sol.velocity(m.face_centroids, 0.0)
    P = sol.pressure(m.centroids, 0.0)
    assert compute_errors(m, U, P + 7.0, sol, 0.0) == (0.0, pytest.approx(0.0, abs=1e-14))
    e1 = compute_errors(m, U + 1.0, P + m.centroids[:, 0], sol, 0.0)
    e2 = compute_errors(m, U + 2.0, P + 2 * m.centroids[:, 0], sol, 0.0)
    assert np.allclose(np.array(e2), 2 * np.array(e1))
    # constant error of 1 in one component: L2 norm over the unit square
    assert math.isclose(e1[0], math.sqrt(2.0))


def test_config_time_resolution():
    c = ProblemConfig(case="gt2d", dt=0.003, final_time=0.01)
    assert c.steps == 4 and math.isclose(c.dt, 0.0025)
    c = ProblemConfig(case="gt2d", steps=5)
    assert math.isclose(c.final_time, 0.01) and math.isclose(c.mu, 500.0)
    c = ProblemConfig(case="cavity")
    assert not c.transient and c.mu == 0 and math.isclose(c.nu, 1e-3)
    for bad in (dict(case="nope"), dict(path="x"), dict(level=0), dict(case="gt2d", dim=3),
                dict(case="gt2d", dt=-1.0), dict(case="gt2d", Re=-2.0)):
        with pytest.raises(ValueError):
            ProblemConfig(**bad)
    assert steps_for(0.1, 0.01, 0.16) == 7


def test_constant_matrix_reuse():
    cfg = ProblemConfig(case="gt3d-stokes", level=2, steps=3, path="hybrid")
    res = run(cfg)
    assert res.n_setups == 1 and len(res.reports) == 3
    assert all(h.iterations == 1 for h in res.newton)
    cfg = ProblemConfig(case="gt2d", level=4, steps=2, path="coupled")
    res = run(cfg)
    assert res.n_setups == len(res.reports) > 2


@pytest.mark.parametrize("case, level", [("gt2d", 6), ("gt3d-stokes", 2)])
def test_paths_agree_on_transient_runs(case, level):
    r = {p: run(ProblemConfig(case=case, level=level, steps=3, path=p)) for p in ("coupled", "hybrid")}
    scale = np.abs(r["coupled"].U).max()
    assert np.abs(r["hybrid"].U - r["coupled"].U).max() <= 1e-8 * scale
    pscale = np.abs(r["coupled"].P).max()
    assert np.abs(r["hybrid"].P - r["coupled"].P).max() <= 1e-8 * pscale
    assert r["hybrid"].converged


def test_kinetic_energy_decays():
    cfg = ProblemConfig(case="gt2d", level=8, steps=8, path="hybrid")
    res = driver.run_transient(cfg, keep_states=True)
    m = res.mesh
    w = np.zeros(m.n_faces)
    np.add.at(w, m.cell_faces.ravel(), np.repeat(m.volumes / 3, 3))
    energy = [w @ (U**2).sum(axis=1) for U, _ in res.states]
    assert np.all(np.diff(energy) < 0)


@pytest.mark.parametrize("path", ["hybrid", "coupled"])
def test_well_balanced(path):
    m = build_unit_square_mesh(8)
    umax, perr = well_balanced_test(m, (1.0, 2.0), path=path)
    assert umax <= 1e-11 * math.hypot(1, 2) * 2
    assert perr <= 1e-10
    umax, perr = well_balanced_test(m, (-3.0, 0.5), mu=100.0, path=path)
    assert umax <= 1e-11 * 3.1 * 2 and perr <= 1e-10


def test_constant_force_case_recovers_potential():
    res = run(ProblemConfig(case="constant-force", level=4))
    assert res.errl2U < 1e-12 and res.errl2P < 1e-12
    assert constant_force_solution((1.0, 2.0)).pressure(np.array([[1.0, 1.0]]), 0)[0] == 3.0


def test_stokes_cavity_single_newton_step():
    cfg = lid_driven_cavity_config(Re=100.0, level=6, convective=False, method="lu")
    res = run(cfg)
    assert res.newton[0].iterations == 1 and res.converged


def test_navier_stokes_cavity_quadratic_tail():
    cfg = lid_driven_cavity_config(Re=100.0, level=8, method="lu")
    res = run(cfg)
    h = res.newton[0].residuals
    assert res.converged and h[-1] <= 5e-7
    # quadratic convergence: the exponent of the last reductions exceeds 1.5
    tail = [r for r in h if r > 1e-13]
    if len(tail) >= 3:
        a, b, c = tail[-3:]
        assert math.log(c / b) / math.log(b / a) > 1.5


def test_newton_failure_is_reported():
    cfg = lid_driven_cavity_config(Re=1000.0, level=4, method="lu")
    cfg.newton_maxiter = 1
    with pytest.raises(driver.NewtonError) as err:
        run(cfg)
    assert err.value.history is not None and len(err.value.history.residuals) == 2


def test_linear_failure_is_reported():
    cfg = ProblemConfig(case="gt2d", level=4, steps=1, path="coupled",
                        solver=SolverConfig("cg", maxiter=3))
    with pytest.raises(driver.LinearSolveError):
        run(cfg)


def test_convergence_study_rows():
    rows, results = convergence_study("gt2d", [4, 8], 0.16)
    assert [r.level for r in rows] == [4, 8]
    assert rows[0].ratioU is None and rows[1].ratioU is not None
    assert results[1].config.steps == steps_for(results[1].mesh.h, 0.01, 0.16)
    md = driver.study_markdown(rows)
    assert md.startswith("| dt | h | errl2U | ratio | errl2P | ratio |")
    assert driver.study_csv(rows).splitlines()[0] == "level,dt,h,errl2U,ratioU,errl2P,ratioP"
    with pytest.raises(ValueError):
        convergence_study("gt2d", [4], 0.16)


def test_fmt():
    assert fmt(0.123456789) == "0.123457"
    assert fmt(None) == "-" and fmt(True) == "true" and fmt(3) == "3"
    assert fmt(float("nan")) == "nan" and fmt(1.5e-11) == "1.5e-11"


def test_plan_parsing_and_expansion():
    plan = read_plan("""
        # comment line
        case = gt2d
        level = 4, 8
        path = coupled, hybrid   # both paths
        tol = 1e-10
        stokes-mode = true
    """)
    assert plan == dict(case=["gt2d"], level=[4, 8], path=["coupled", "hybrid"], tol=[1e-10], stokes_mode=[True])
    entries = expand_plan(plan)
    assert len(entries) == 4 and entries[1]["path"] == "hybrid"
    with pytest.raises(ValueError):
        read_plan("no equals sign")


def test_bench_rows_and_report(tmp_path):
    entries = expand_plan(read_plan("case = gt2d\nlevel = 4\nsteps = 2\npath = coupled, hybrid\nsolver = lu\n"))
    entries.append(dict(case="gt2d", level=4, steps=1, solver="cg", maxiter=2, path="coupled"))
    rows = driver.bench(entries)
    assert [r["converged"] for r in rows] == [True, True, False]
    assert "error" in rows[2]
    assert math.isclose(rows[0]["errl2U"], rows[1]["errl2U"], rel_tol=1e-8)
    pc, pm = driver.write_report(rows, tmp_path, "bench")
    lines = pc.read_text().splitlines()
    assert lines[0] == ",".join(driver.CSV_COLUMNS)
    assert len(lines) == 4
    assert lines[1].split(",")[2] == "direct-lu"
    assert pm.read_text().count("\n") == 5


def test_config_from_entry_cavity():
    cfg = driver.config_from_entry(dict(case="cavity", re=400, level=8, path="coupled", precond="ilu2"))
    assert cfg.Re == 400 and cfg.solver.method == "gmres" and cfg.solver.precond == "ilu2"
    assert math.isclose(cfg.nu, 1 / 400)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import mather_lab.cell_solver as cs
from mather_lab.cell_solver import (
    NonConvergence,
    SolverConfig,
    p_derivative_fields,
    solve_cell,
    solve_discounted,
    sweep_effective,
)
from mather_lab.hamiltonian import eval_bundle, make_spec
from mather_lab.torus_field import PeriodicGrid
from oracles import hill_hbar

PEND = make_spec("pendulum")


def physical_residual(sol):
    t, x = sol.grid.mesh()
    H = eval_bundle(sol.spec, x, sol.momentum(), t).H
    return sol.phi_t.values + sol.eps * sol.laplacian.values + H - sol.hbar


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(cfl=1.5)
    with pytest.raises(ValueError):
        SolverConfig(drift_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(scheme="upwind")


@settings(max_examples=8, deadline=None)
@given(st.floats(-1.5, 1.5), st.sampled_from([0.2, 0.05, 0.0125]))
def test_free_hamiltonian_is_trivial(P, eps):
    sol = solve_cell(make_spec("free", 1), [P], eps, PeriodicGrid(1, 16, 16))
    assert abs(sol.hbar - 0.5 * P * P) < 1e-8
    assert np.max(np.abs(sol.phi.values)) < 1e-8


def test_time_dependent_x_independent_hamiltonian():
    # H = sin(2 pi t) p + cos^2(2 pi t): Hbar = <sin> P + <cos^2> = 0.5
    spec = make_spec("time_linear", c_mean=0.0, c_amp=1.0, v_amp=1.0)
    sol = solve_cell(spec, [1.0], 0.1, PeriodicGrid(1, 16, 64))
    assert abs(sol.hbar - 0.5) < 1e-6
    # phi depends on t only
    assert np.max(np.ptp(sol.phi.values, axis=1)) < 1e-10


def test_pendulum_matches_hill_oracle_at_second_order():
    errs = []
    for n in (32, 64):
        sol = solve_cell(PEND, [0.5], 0.05, PeriodicGrid(1, n, n))
        errs.append(abs(sol.hbar - hill_hbar(0.5, 0.05)))
    assert errs[1] < 2e-4
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_solution_invariants():
    cfg = SolverConfig()
    sol = solve_cell(PEND, [0.5], 0.05, PeriodicGrid(1, 64, 64), cfg)
    assert abs(sol.phi.values.mean()) < 1e-12
    assert sol.residual_rms <= 10 * cfg.drift_tol
    assert np.sqrt(np.mean(physical_residual(sol) ** 2)) < 1e-6
    assert sol.kappa == (0.05,)
    U = sol.drift.stack()[..., 0]
    np.testing.assert_allclose(U, sol.momentum()[..., 0], rtol=0, atol=1e-15)
    H = sol.hessian_array()
    assert H.shape == sol.grid.shape + (1, 1)
    assert sol.p_sup == pytest.approx(np.max(np.abs(sol.momentum())))


def test_warm_and_cold_start_agree():
    g = PeriodicGrid(1, 64, 64)
    cold = solve_cell(PEND, [0.0], 0.05, g)
    warm_from = solve_cell(PEND, [0.0], 0.1, g)
    warm = solve_cell(PEND, [0.0], 0.05, g, init=warm_from.phi.values)
    assert abs(cold.hbar - warm.hbar) < 1e-8


def test_solve_is_deterministic():
    g = PeriodicGrid(1, 32, 32)
    a = solve_cell(PEND, [0.3], 0.05, g)
    b = solve_cell(PEND, [0.3], 0.05, g)
    assert a.hbar == b.hbar and np.array_equal(a.phi.values, b.phi.values)


def test_nonconvergence_reports_history():
    with pytest.raises(NonConvergence) as info:
        solve_cell(PEND, [0.0], 0.05, PeriodicGrid(1, 32, 32), SolverConfig(max_periods=2))
    assert len(info.value.drift_history) >= 1


def test_bad_arguments():
    g = PeriodicGrid(1, 16, 16)
    with pytest.raises(ValueError):
        solve_cell(PEND, [0.0], 0.0, g)
    with pytest.raises(ValueError):
        solve_cell(PEND, [0.0, 1.0], 0.1, g)


def test_sweep_orders_rows_and_isolates_failures(monkeypatch, tmp_path):
    g = PeriodicGrid(1, 16, 16)
    real = cs.solve_cell

    def flaky(spec, P, eps, grid, cfg=None, init=None, kappa=None):
        if eps == 0.1 and P[0] == 0.5:
            raise NonConvergence("forced", [1.0])
        return real(spec, P, eps, grid, cfg, init=init, kappa=kappa)

    monkeypatch.setattr(cs, "solve_cell", flaky)
    rep = sweep_effective(make_spec("free", 1), [0.5, -1.0], [0.1, 0.2, 0.05], g)
    assert [(r.P[0], r.eps) for r in rep.rows] == [(-1.0, 0.2), (-1.0, 0.1), (-1.0, 0.05),
                                                    (0.5, 0.2), (0.5, 0.1), (0.5, 0.05)]
    bad = [r for r in rep.rows if r.error]
    assert len(bad) == 1 and bad[0].eps == 0.1 and "forced" in bad[0].error
    for r in rep.rows:
        if not r.error:
            assert abs(r.hbar - 0.5 * r.P[0] ** 2) < 1e-6
    path = rep.write_csv(tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == "P,eps,hbar,p_sup,residual_rms,periods,seconds"
    rep.write_csv(tmp_path / "t.csv", with_seconds=False)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "P,eps,hbar,p_sup,residual_rms,periods"


def test_pendulum_gap_decreases_along_sweep():
    rep = sweep_effective(PEND, [0.0], [0.2, 0.1, 0.05], PeriodicGrid(1, 64, 64))
    gaps = [abs(r.hbar - 1.0) for r in rep.rows]
    assert gaps[0] > gaps[1] > gaps[2]


def test_discounted_problem():
    g = PeriodicGrid(1, 16, 16)
    phi, est = solve_discounted(make_spec("free", 1), g, 0.1)
    assert abs(est) < 1e-12 and np.max(np.abs(phi.values)) < 1e-10
    # H = V(t): the estimate tends to the time average of V
    spec = make_spec("time_linear", c_mean=0.0, c_amp=0.0, v_amp=1.0)
    _, est = solve_discounted(spec, PeriodicGrid(1, 16, 64), 1e-3)
    assert abs(est - 0.5) < 1e-3
    g = PeriodicGrid(1, 32, 32)
    _, est = solve_discounted(PEND, g, 1e-2)
    assert abs(est - solve_cell(PEND, [0.0], 1.0, g).hbar) < 0.1
    with pytest.raises(ValueError):
        solve_discounted(PEND, g, 0.0)


def test_p_derivatives_free_and_pendulum():
    g = PeriodicGrid(1, 16, 16)
    d = p_derivative_fields(make_spec("free", 1), [0.4], 0.1, g)
    assert d.dhbar[0] == pytest.approx(0.4, abs=1e-8)
    assert d.d2hbar[0] == pytest.approx(1.0, abs=1e-5)
    # pendulum: the P-derivative of Hbar matches a difference of Hill eigenvalues
    g = PeriodicGrid(1, 64, 64)
    d = p_derivative_fields(PEND, [0.5], 0.1, g, h=1e-3)
    ref = (hill_hbar(0.501, 0.1) - hill_hbar(0.499, 0.1)) / 2e-3
    assert d.dhbar[0] == pytest.approx(ref, abs=2e-3)
    assert abs(np.mean(d.dphi[0].values)) < 1e-9

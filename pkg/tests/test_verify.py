import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mather_lab.cell_solver import solve_cell
from mather_lab.fokker_planck import solve_theta
from mather_lab.hamiltonian import make_spec
from mather_lab.measures import build_measure, dissipation_matrix, observable_dictionary, support_radius
from mather_lab.torus_field import PeriodicGrid
from mather_lab.verify import (
    SweepEntry,
    VerificationReport,
    bound_row,
    check_adjoint_identity,
    check_density,
    check_dissipation,
    check_estimates,
    check_mather_conditions,
    check_uniform_bounds,
    info_row,
    known_inviscid_hbar,
    loglog_slope,
    row,
    vanishing_viscosity_report,
)

EPS = (0.2, 0.1, 0.05)


def entry(spec, P, eps, grid):
    cell = solve_cell(spec, P, eps, grid)
    theta = solve_theta(cell.drift, eps, grid, viscosity=cell.kappa)
    mu = build_measure(cell, theta)
    dm = dissipation_matrix(cell, mu)
    obs = observable_dictionary(grid.d, support_radius(cell.p_sup))
    adj = check_adjoint_identity(cell, mu, dm, obs, theta)
    return SweepEntry(cell, theta, mu, dissipation=dm, adjoint=adj)


def full_report(spec, P, grid):
    entries = [entry(spec, P, e, grid) for e in EPS]
    rep = VerificationReport()
    for e in entries:
        rep.extend(check_density(e.cell, e.theta))
        rep.extend(check_mather_conditions(e.cell, e.theta, e.mu))
        rep.extend(check_dissipation(e.cell, e.dissipation))
        rep.extend(e.adjoint)
    rep.extend(check_estimates(entries[-1].cell, entries[-1].theta))
    rep.extend(check_uniform_bounds(entries))
    rep.extend(vanishing_viscosity_report(entries, known_inviscid_hbar(spec, P)))
    return rep


@pytest.fixture(scope="module")
def free_report():
    return full_report(make_spec("free", 1), [0.6], PeriodicGrid(1, 16, 16))


def test_free_hamiltonian_passes_every_row(free_report):
    assert free_report.failures() == []
    assert len(free_report.rows) > 50
    for r in free_report.get("vanishing"):
        if r.name.startswith("hbar eps"):
            assert r.lhs == pytest.approx(0.18, abs=1e-10)


def test_report_json_is_byte_stable(free_report):
    again = full_report(make_spec("free", 1), [0.6], PeriodicGrid(1, 16, 16))
    assert again.to_json() == free_report.to_json()
    payload = json.loads(free_report.to_json())
    assert payload["passed"] is True
    assert set(payload["rows"][0]) == {"check", "name", "lhs", "rhs", "abs_residual", "rel_residual",
                                       "scale", "tolerance", "metric", "passed", "context"}


def test_text_report_has_one_line_per_row(free_report):
    lines = free_report.to_text().splitlines()
    assert len(lines) == len(free_report.rows) + 1
    assert lines[0].split()[:2] == ["check", "name"]


@pytest.fixture(scope="module")
def pendulum_entry():
    return entry(make_spec("pendulum"), [0.5], 0.05, PeriodicGrid(1, 64, 64))


def test_pendulum_identity_and_estimates(pendulum_entry):
    e = pendulum_entry
    rep = check_mather_conditions(e.cell, e.theta, e.mu)
    assert rep.one("mather_a", "identity").passed
    assert rep.one("mather_c", "stationarity_discrete").passed
    est = check_estimates(e.cell, e.theta)
    assert est.passed, est.to_text()
    assert len(est.get("estimates")) >= 6


def test_p_free_adjoint_rows_match_stationarity(pendulum_entry):
    r = pendulum_entry.adjoint.one("adjoint", "p_free_matches_stationarity")
    assert r.passed and r.lhs == 0.0


def test_adjoint_eps_terms_is_triangle_sum(pendulum_entry):
    a = pendulum_entry.adjoint
    v, m, s = (a.one("adjoint", f"max {k}").lhs for k in ("viscous", "mixed", "eps_terms"))
    assert max(v, m) <= s <= v + m + 1e-15


def test_dissipation_rows(pendulum_entry):
    rep = check_dissipation(pendulum_entry.cell, pendulum_entry.dissipation)
    assert rep.passed
    assert {r.name for r in rep.rows} >= {"symmetric", "neg_min_eigenvalue"}


def test_row_semantics():
    assert row("c", "n", 1.0, 1.0 + 1e-9, 1e-8).passed
    assert not row("c", "n", 1.0, 1.1, 1e-2).passed
    assert row("c", "n", 0.0, 1e-14, 1e-8, atol=1e-12).passed
    assert row("c", "n", 0.0, 0.0, 0.0).rel_residual == 0.0
    with pytest.raises(FloatingPointError):
        row("c", "n", float("nan"), 0.0, 1.0)
    assert bound_row("c", "n", 1.04, 1.0, 0.05).passed
    assert not bound_row("c", "n", 1.06, 1.0, 0.05).passed
    assert bound_row("c", "n", 0.5, 1.0).rel_residual == 0.0
    info = info_row("c", "n", 3.0)
    assert info.passed and math.isinf(info.tolerance)
    assert info.to_dict()["tolerance"] == "inf"


def test_report_lookup():
    rep = VerificationReport()
    rep.add(row("a", "x", 1, 1, 0))
    rep.add([row("a", "y", 1, 2, 0), row("b", "x", 1, 1, 0)])
    assert not rep.passed and [r.name for r in rep.failures()] == ["y"]
    assert len(rep.get("a")) == 2
    with pytest.raises(KeyError):
        rep.one("c", "x")


def test_known_inviscid_values():
    assert known_inviscid_hbar(make_spec("free", 2), [0.3, 0.4]) == pytest.approx(0.125)
    assert known_inviscid_hbar(make_spec("zero", 1), [1.0]) == 0.0
    pend = make_spec("pendulum")
    assert known_inviscid_hbar(pend, [1.0]) == 1.0
    assert known_inviscid_hbar(pend, [4 / math.pi + 0.01]) is None
    tl = make_spec("time_linear", c_mean=0.5, c_amp=1.0, v_amp=2.0)
    assert known_inviscid_hbar(tl, [2.0]) == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-3, 1e3))
def test_loglog_slope_recovers_power_laws(a, c):
    eps = [0.2, 0.1, 0.05, 0.025]
    vals = [c * e ** a for e in eps]
    assert loglog_slope(eps, vals) == pytest.approx(a, abs=1e-8)


def test_uniform_bounds_need_three_values(pendulum_entry):
    with pytest.raises(ValueError):
        check_uniform_bounds([pendulum_entry, pendulum_entry])

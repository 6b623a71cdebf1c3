import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mather_lab.cell_solver import solve_cell
from mather_lab.fokker_planck import (
    DensityField,
    Mode,
    NegativeDensity,
    dictionary,
    mode_generator,
    node_weights,
    solve_theta,
    stationarity_residual,
    weighted_sum,
)
from mather_lab.hamiltonian import make_spec
from mather_lab.torus_field import PeriodicGrid, VectorField, central_diff, forward_diff, second_diff
from oracles import gibbs_density

TWO_PI = 2 * np.pi


def drift_from(grid, fn):
    t, x = grid.mesh()
    return VectorField.from_array(grid, fn(x, t))


def gibbs_case(n, eps=0.1, a=0.5):
    g = PeriodicGrid(1, n, 8)
    V = lambda x: a * np.cos(TWO_PI * x)
    # U = -V'
    U = drift_from(g, lambda x, t: (a * TWO_PI * np.sin(TWO_PI * x[..., 0]))[..., None])
    theta = solve_theta(U, eps, g)
    return theta, gibbs_density(V, eps, n)


def test_gibbs_density():
    errs = []
    for n in (128, 256):
        theta, ref = gibbs_case(n)
        errs.append(np.mean(np.abs(theta.values[0] - ref)))
        assert np.max(np.ptp(theta.values, axis=0)) < 1e-10   # steady
    assert errs[1] < 1e-2
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_zero_drift_gives_uniform_density():
    g = PeriodicGrid(2, 8, 8)
    theta = solve_theta(drift_from(g, lambda x, t: np.zeros(x.shape)), 0.1, g)
    assert np.max(np.abs(theta.values - 1.0)) < 1e-13


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2]))
def test_discrete_duality_and_positivity(seed, d):
    # random smooth time-dependent drift; the density is the exact discrete adjoint
    rng = np.random.default_rng(seed)
    g = PeriodicGrid(d, 12, 12)
    c = rng.normal(size=(3, d))

    def U(x, t):
        ph = TWO_PI * (x.sum(axis=-1) + t)
        return c[0] + c[1] * np.sin(ph)[..., None] + c[2] * np.cos(TWO_PI * x[..., :1] - TWO_PI * t[..., None])

    drift = drift_from(g, U)
    theta = solve_theta(drift, 0.05, g, tol=1e-13)
    assert np.min(theta.values) >= 0
    np.testing.assert_allclose(theta.slice_mass(), 1.0, atol=1e-12)
    assert stationarity_residual(theta, drift, 0.05, "discrete") < 1e-10
    # the same identity for an arbitrary node function, not only dictionary modes
    psi = rng.normal(size=g.shape)
    kap = np.maximum(np.asarray(theta.kappa), 0.5 * g.h * np.abs(drift.stack()))
    gen = forward_diff(psi, 0, g.dt)
    for i in range(d):
        gen = gen + drift.stack()[..., i] * central_diff(psi, i + 1, g.h)
        gen = gen + kap[..., i] * second_diff(psi, i + 1, g.h)
    assert abs(weighted_sum(node_weights(theta.values), gen)) < 1e-10 * (1 + np.max(np.abs(gen)))


def test_cell_density_residuals_at_reference_resolution():
    g = PeriodicGrid(1, 128, 128)
    sol = solve_cell(make_spec("pendulum"), [0.5], 0.05, g)
    theta = solve_theta(sol.drift, 0.05, g, viscosity=sol.kappa)
    assert np.min(theta.values) >= 0
    assert abs(theta.mass() - 1.0) < 1e-12
    assert stationarity_residual(theta, sol.drift, 0.05, "discrete") < 1e-3
    # exact test-function derivatives see the O(h^2) truncation of the scheme
    coarse = PeriodicGrid(1, 64, 64)
    sc = solve_cell(make_spec("pendulum"), [0.5], 0.05, coarse)
    tc = solve_theta(sc.drift, 0.05, coarse, viscosity=sc.kappa)
    r_fine = stationarity_residual(theta, sol.drift, 0.05, "analytic")
    r_coarse = stationarity_residual(tc, sc.drift, 0.05, "analytic")
    assert r_fine < r_coarse / 2


def test_dictionary_structure():
    d1, d2 = dictionary(1), dictionary(2)
    assert len(d1) == 24 and len(d2) == 124
    keys = {(m.k, m.m) for m in d2}
    for k, m in keys:
        neg = (tuple(-v for v in k), -m)
        assert neg == (k, m) or neg not in keys
    assert len({m.name for m in d2}) == len(d2)
    with pytest.raises(ValueError):
        dictionary(3)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(dictionary(2)), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_mode_derivatives(mode, x1, x2, t):
    x = np.array([x1, x2])
    f, ft, grad, dxx = mode.derivatives(x, t)
    s = 1e-6
    assert (mode.value(x, t + s) - mode.value(x, t - s)) / (2 * s) == pytest.approx(ft, abs=1e-4)
    for i in range(2):
        e = np.eye(2)[i] * s
        assert (mode.value(x + e, t) - mode.value(x - e, t)) / (2 * s) == pytest.approx(grad[i], abs=1e-4)
        fd2 = (mode.value(x + e, t) - 2 * f + mode.value(x - e, t)) / s ** 2
        assert fd2 == pytest.approx(dxx[i], abs=2e-2 * (1 + abs(dxx[i])))
    np.testing.assert_allclose(np.diag(mode.hessian(x, t)), dxx, atol=1e-9)


def test_mode_generator_terms():
    m = Mode("sin", (1,), 0)
    x = np.array([[0.1]])
    val = mode_generator(m, x, np.array([0.0]), np.array([[2.0]]), (0.5,))
    expected = 2.0 * TWO_PI * np.cos(TWO_PI * 0.1) - 0.5 * TWO_PI ** 2 * np.sin(TWO_PI * 0.1)
    assert val[0] == pytest.approx(expected)


def test_density_validation():
    g = PeriodicGrid(1, 8, 8)
    with pytest.raises(NegativeDensity):
        DensityField(g, -np.ones(g.shape), 0.1)
    with pytest.raises(ValueError):
        DensityField(g, np.ones((8, 9)), 0.1)
    with pytest.raises(ValueError):
        solve_theta(drift_from(g, lambda x, t: np.zeros(x.shape)), 0.0, g)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mather_lab.cell_solver import solve_cell
from mather_lab.fokker_planck import Mode
from mather_lab.hamiltonian import make_spec
from mather_lab.measures import Observable, SupportLeak, observable_dictionary
from mather_lab.sde_lab import (
    AccuracyGuard,
    _Noise,
    dynkin_residual,
    empirical_measure,
    gaussian_block,
    momentum_increment_check,
    simulate,
)
from mather_lab.torus_field import PeriodicGrid

COS1 = Observable(Mode("cos", (1,), 0), (), 3.0)
SIN1P = Observable(Mode("sin", (1,), 0), (0,), 3.0)
ONE = Observable(None, (), 3.0)


@pytest.fixture(scope="module")
def free_cell():
    return solve_cell(make_spec("free", 1), [0.7], 0.1, PeriodicGrid(1, 16, 16))


@pytest.fixture(scope="module")
def pend_cell():
    return solve_cell(make_spec("pendulum"), [0.5], 0.1, PeriodicGrid(1, 64, 64))


def test_deterministic_free_flow(free_cell):
    b = simulate(free_cell, 4, 1e-2, 20, 1, burn_in=10, sample_every=10, x0=[0.0], eps=0.0)
    # X(t) = 0.7 t mod 1; after 20 periods the wrapped position is 0
    assert np.all(np.minimum(b.X_end, 1 - b.X_end) < 1e-10)
    np.testing.assert_allclose(b.p_end, 0.7, atol=1e-8)


def test_free_noise_keeps_momentum(free_cell):
    b = simulate(free_cell, 40, 1e-2, 20, 2, sample_every=10)
    np.testing.assert_allclose(b.p_end, 0.7, atol=1e-8)
    assert b.p_max == pytest.approx(0.7, abs=1e-8)
    res = empirical_measure(b, [ONE, COS1])
    assert res.mean[0] == pytest.approx(1.0, abs=1e-14)
    # the invariant density of a constant drift is uniform
    assert abs(res.mean[1]) < 4 * res.se[1]


def test_free_dynkin_residual_is_boundary_sized(free_cell):
    obs = observable_dictionary(1, 3.0)
    b = simulate(free_cell, 40, 1e-2, 30, 3, sample_every=10)
    res = dynkin_residual(b, obs)
    # constant drift makes Euler-Maruyama exact in law; only the boundary term survives
    q_max = 0.7 ** 2
    assert np.all(np.abs(res.mean) <= 2 * max(1.0, q_max) / b.horizon + 4 * res.se + 1e-12)


def test_same_seed_is_bitwise_equal(pend_cell):
    a = simulate(pend_cell, 40, 2e-3, 20, 11)
    b = simulate(pend_cell, 40, 2e-3, 20, 11)
    assert np.array_equal(a.S_val, b.S_val) and np.array_equal(a.S_gen, b.S_gen)
    assert np.array_equal(a.X_end, b.X_end)
    assert empirical_measure(a, [COS1, SIN1P]).to_json() == empirical_measure(b, [COS1, SIN1P]).to_json()


def test_two_seeds_agree_statistically(pend_cell):
    a = empirical_measure(simulate(pend_cell, 200, 2e-3, 30, 5), [COS1, SIN1P])
    b = empirical_measure(simulate(pend_cell, 200, 2e-3, 30, 6), [COS1, SIN1P])
    z = np.abs(a.mean - b.mean) / np.hypot(a.se, b.se)
    assert np.all(z < 4)
    assert not np.array_equal(a.mean, b.mean)


def test_accuracy_guards(pend_cell):
    with pytest.raises(AccuracyGuard):
        simulate(pend_cell, 10, 0.05, 20, 1)                 # dt too coarse for the drift
    with pytest.raises(AccuracyGuard):
        simulate(pend_cell, 10, 1e-3, 15, 1, burn_in=10)     # horizon too short
    with pytest.raises(AccuracyGuard):
        simulate(pend_cell, 10, 1e-3, 20, 1, sample_every=7)
    with pytest.raises(AccuracyGuard):
        simulate(pend_cell, 211, 1e-3, 20, 1)                # no usable group count
    with pytest.raises(ValueError):
        simulate(pend_cell, 10, 1e-3, 20, 1, eps=-1.0)


def test_support_leak_on_small_radius(pend_cell):
    b = simulate(pend_cell, 20, 2e-3, 20, 1)
    with pytest.raises(SupportLeak):
        empirical_measure(b, [Observable(None, (0,), 0.1)])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 5), st.integers(0, 50))
def test_gaussian_block_is_pure(seed, block, chunk):
    a = gaussian_block(seed, block, chunk, 4, 3)
    assert np.array_equal(a, gaussian_block(seed, block, chunk, 4, 3))
    assert not np.array_equal(a, gaussian_block(seed, block + 1, chunk, 4, 3))
    # a shorter draw is a prefix of a longer one
    assert np.array_equal(gaussian_block(seed, block, chunk, 2, 3), a[:2])


def test_noise_does_not_depend_on_path_count():
    small, large = _Noise(9, 1500, 1), _Noise(9, 3000, 1)
    np.testing.assert_array_equal(small.chunk(2), large.chunk(2)[:, :1500])
    np.testing.assert_array_equal(small.initial(), large.initial()[:1500])


def test_momentum_increment(pend_cell):
    dt = 1e-4
    mean, se = momentum_increment_check(pend_cell, 20000, dt, 4)
    # the drift of p along paths is -H_x up to sampling, O(dt) and interpolation error
    assert abs(mean[0]) < 4 * se[0] + 0.1
    hess = pend_cell.hessian_array()[..., 0, 0]
    expected_se = math.sqrt(2 * pend_cell.eps * np.mean(hess[0] ** 2) / dt / 20000)
    assert se[0] == pytest.approx(expected_se, rel=0.1)

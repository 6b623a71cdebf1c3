import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mather_lab.torus_field import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    backward_diff,
    central_diff,
    differentiate,
    dump_field,
    forward_diff,
    gradient_energy,
    integrate,
    interpolate,
    load_field,
    second_diff,
)
from oracles import central_symbol, second_symbol

TWO_PI = 2 * np.pi


def sample(grid, f):
    return grid.sample(f)


def test_grid_rejects_coarse_and_bad_dimension():
    with pytest.raises(ValueError):
        PeriodicGrid(1, 4, 16)
    with pytest.raises(ValueError):
        PeriodicGrid(3, 16, 16)


def test_grid_geometry():
    g = PeriodicGrid(2, 16, 8)
    assert g.shape == (8, 16, 16)
    assert g.size == 8 * 16 * 16
    t, x = g.mesh()
    assert x.shape == (8, 16, 16, 2)
    assert t[3, 0, 0] == 3 / 8 and x[0, 5, 7, 0] == 5 / 16 and x[0, 5, 7, 1] == 7 / 16


def test_field_validation():
    g = PeriodicGrid(1, 8, 8)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((8, 9)))
    with pytest.raises(ValueError):
        ScalarField(g, np.full((8, 8), np.nan))
    f = ScalarField(g, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        VectorField(g, (f, f))


@pytest.mark.parametrize("k", [1, 2, 5])
def test_stencils_match_discrete_symbols(k):
    # the stencils act on Fourier modes by known multipliers
    g = PeriodicGrid(1, 64, 8)
    h = g.h
    s = sample(g, lambda x, t: np.sin(TWO_PI * k * x[..., 0])).values
    c = sample(g, lambda x, t: np.cos(TWO_PI * k * x[..., 0])).values
    np.testing.assert_allclose(central_diff(s, 1, h), central_symbol(k, h) * c, atol=1e-12)
    np.testing.assert_allclose(second_diff(s, 1, h), second_symbol(k, h) * s, atol=1e-9)
    # one-sided differences average to the centered one
    np.testing.assert_allclose(0.5 * (forward_diff(s, 1, h) + backward_diff(s, 1, h)),
                               central_diff(s, 1, h), atol=1e-12)


def test_constant_field_has_zero_derivatives():
    g = PeriodicGrid(2, 16, 16)
    f = ScalarField(g, np.full(g.shape, 2.5))
    for scheme in ("central2", "spectral"):
        assert np.all(differentiate(f, "grad_x", scheme).stack() == 0)
        assert np.max(np.abs(differentiate(f, "laplacian_x", scheme).values)) < 1e-12


def test_central_gradient_second_order():
    errs = []
    for n in (64, 128, 256):
        g = PeriodicGrid(1, n, 8)
        f = sample(g, lambda x, t: np.sin(TWO_PI * x[..., 0]))
        exact = TWO_PI * np.cos(TWO_PI * g.mesh()[1][..., 0])
        errs.append(np.max(np.abs(differentiate(f, "grad_x").stack()[..., 0] - exact)))
    assert errs[1] < 1e-2
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(slopes, 2.0, atol=0.05)


def test_spectral_laplacian_exact_on_band_limited_data():
    g = PeriodicGrid(1, 32, 8)
    f = sample(g, lambda x, t: np.sin(TWO_PI * x[..., 0]))
    lap = differentiate(f, "laplacian_x", "spectral").values
    assert np.max(np.abs(lap + TWO_PI ** 2 * f.values)) < 1e-10


def test_spectral_time_derivative_and_mixed_hessian():
    g = PeriodicGrid(2, 16, 16)
    f = sample(g, lambda x, t: np.sin(TWO_PI * (x[..., 0] + 2 * x[..., 1] - t)))
    t, x = g.mesh()
    ph = TWO_PI * (x[..., 0] + 2 * x[..., 1] - t)
    ft = differentiate(f, "d_t", "spectral").values
    assert np.max(np.abs(ft + TWO_PI * np.cos(ph))) < 1e-10
    H = differentiate(f, "hessian_xx", "spectral")
    assert H[0][1] is H[1][0]
    assert np.max(np.abs(H[0][1].values + 2 * TWO_PI ** 2 * np.sin(ph))) < 1e-9


def test_differentiate_argument_errors():
    g = PeriodicGrid(1, 8, 8)
    f = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        differentiate(f, "curl")
    with pytest.raises(ValueError):
        differentiate(f, "grad_x", "forward")


def test_integrate_examples():
    g = PeriodicGrid(1, 64, 8)
    assert integrate(ScalarField(g, np.full(g.shape, 3.5))) == 3.5
    assert abs(integrate(sample(g, lambda x, t: np.sin(TWO_PI * x[..., 0])))) < 1e-14
    assert abs(integrate(sample(g, lambda x, t: np.sin(TWO_PI * x[..., 0]) ** 2)) - 0.5) < 1e-14


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15))
def test_interpolation_is_exact_at_nodes(i, j):
    g = PeriodicGrid(1, 16, 16)
    rng = np.random.default_rng(i * 16 + j)
    f = ScalarField(g, rng.standard_normal(g.shape))
    val = interpolate(f, np.array([[j / 16]]), np.array([i / 16]))
    assert val[0] == f.values[i, j]


def test_interpolation_reproduces_linear_and_is_second_order():
    g = PeriodicGrid(1, 256, 8)
    f = sample(g, lambda x, t: np.sin(TWO_PI * x[..., 0]))
    x0 = 0.3 + g.h / 2
    v = interpolate(f, np.array([[x0]]), np.array([0.0]))[0]
    assert abs(v - np.sin(TWO_PI * x0)) < 1e-4
    # mid-cell value of any field is the mean of its neighbours
    i = 40
    mid = interpolate(f, np.array([[(i + 0.5) / 256]]), np.array([0.0]))[0]
    assert mid == pytest.approx(0.5 * (f.values[0, i] + f.values[0, i + 1]), abs=1e-15)


def test_gradient_energy_product_rule():
    g = PeriodicGrid(2, 16, 8)
    rng = np.random.default_rng(3)
    f = rng.standard_normal(g.shape)
    lap = sum(second_diff(f, a, g.h) for a in (1, 2))
    lap2 = sum(second_diff(f * f, a, g.h) for a in (1, 2))
    np.testing.assert_allclose(lap2 - 2 * f * lap, 2 * gradient_energy(f, g), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.integers(8, 12), st.integers(0, 10 ** 6))
def test_dump_round_trip_bitwise(tmp_path_factory, d, n, seed):
    g = PeriodicGrid(d, n, 8)
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(g.shape) * 10.0 ** rng.integers(-300, 300, size=g.shape)
    f = ScalarField(g, vals)
    path = tmp_path_factory.mktemp("dump") / "f.csv"
    dump_field(f, path)
    back = load_field(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(["t"] + [f"x{i + 1}" for i in range(d)] + ["value"])

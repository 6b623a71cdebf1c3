"""Time-periodic stationary density of the linearized cell operator.

theta solves  theta_t - div(kappa grad theta) + div(theta U) = 0  on T^{d+1}.

Each time step is implicit Euler for the transpose of the spatial generator

    G_k psi = sum_i kappa_i lap_i psi + U_k . Dc psi

at the new time node, which is exactly the spatial part of the linearization
of the discrete cell equation. With kappa_i >= |U_i| h / 2 (enforced node by
node) the matrix I - dt G_k^T is an M-matrix with unit column sums, so a
step conserves mass to rounding and maps nonnegative data to nonnegative
data. The factorization is done without pivoting: for an M-matrix every
update in the triangular solves adds nonnegative terms, so the computed
density cannot pick up negative rounding noise.

Summation by parts over one period gives

    sum_k theta_k . (Dt+ psi + G_k psi)_k = 0

for every node function psi; this is the discrete form of the weak
stationarity identity and is what the ``discrete`` residual mode measures.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cell_solver import NonConvergence, _Operators
from .torus_field import PeriodicGrid, VectorField, central_diff, forward_diff, second_diff

logger = logging.getLogger(__name__)

__all__ = [
    "DensityField",
    "NegativeDensity",
    "Mode",
    "dictionary",
    "DICTIONARY_VERSION",
    "solve_theta",
    "stationarity_residual",
    "mode_generator",
    "node_weights",
    "weighted_sum",
]

TWO_PI = 2.0 * np.pi
DICTIONARY_VERSION = "fourier-k2-m2-v1"


class NegativeDensity(RuntimeError):
    """A density value dropped below zero; the scheme is not monotone."""


@dataclass(frozen=True)
class DensityField:
    grid: PeriodicGrid
    values: np.ndarray
    eps: float
    source: str = ""
    kappa: tuple[float, ...] = ()
    periods: int = 0
    history: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"density shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density has non-finite values")
        if np.any(v < 0):
            raise NegativeDensity(f"min density {v.min():.3e} < 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def slice_mass(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.d + 1))
        return self.values.mean(axis=axes)

    def mass(self) -> float:
        return float(np.mean(self.values))


# ---------------------------------------------------------------------------
# test dictionary


@dataclass(frozen=True)
class Mode:
    """sin or cos of 2 pi (k.x + m t)."""

    kind: str
    k: tuple[int, ...]
    m: int

    @property
    def name(self) -> str:
        ks = ",".join(str(v) for v in self.k)
        return f"{self.kind}(k=[{ks}],m={self.m})"

    def phase(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        arg = self.m * np.asarray(t, dtype=float)
        for i, ki in enumerate(self.k):
            if ki:
                arg = arg + ki * x[..., i]
        return TWO_PI * arg

    def _pair(self, x, t):
        a = self.phase(x, t)
        s, c = np.sin(a), np.cos(a)
        # f and its derivative with respect to the phase
        return (s, c) if self.kind == "sin" else (c, -s)

    def value(self, x, t):
        return self._pair(x, t)[0]

    def derivatives(self, x, t):
        """(value, d_t, grad (..., d), diagonal second derivatives (..., d))."""
        f, df = self._pair(x, t)
        k = np.array(self.k, dtype=float)
        grad = (TWO_PI * df)[..., None] * k
        dxx = (-(TWO_PI ** 2) * f)[..., None] * k ** 2
        return f, TWO_PI * self.m * df, grad, dxx

    def hessian(self, x, t):
        f = self.value(x, t)
        k = np.array(self.k, dtype=float)
        return (-(TWO_PI ** 2) * f)[..., None, None] * np.outer(k, k)


def dictionary(d: int) -> tuple[Mode, ...]:
    """All nonconstant Fourier modes with |k|_inf <= 2 and |m| <= 2.

    Each +-(k, m) pair is represented once (first nonzero entry of (m, k)
    positive) by a sin and a cos; 24 functions for d = 1, 124 for d = 2.
    """
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    modes = []
    for m in range(-2, 3):
        for k in itertools.product(range(-2, 3), repeat=d):
            v = (m,) + k
            nz = [c for c in v if c]
            if not nz or nz[0] < 0:
                continue
            modes.append(Mode("cos", k, m))
            modes.append(Mode("sin", k, m))
    return tuple(modes)


# ---------------------------------------------------------------------------
# quadrature shared with the measure module


def node_weights(values: np.ndarray) -> np.ndarray:
    """Quadrature weights of a density on the node lattice (flattened)."""
    v = np.ascontiguousarray(values, dtype=float).ravel()
    return v / v.size


def weighted_sum(weights: np.ndarray, f: np.ndarray) -> float:
    return float(np.sum(weights * np.ascontiguousarray(f).ravel()))


def mode_generator(mode: Mode, x, t, U: np.ndarray, kappa: Sequence[float]) -> np.ndarray:
    """psi_t + U . D psi + sum_i kappa_i psi_{x_i x_i} with exact derivatives."""
    _, ft, grad, dxx = mode.derivatives(x, t)
    out = ft + np.sum(U * grad, axis=-1)
    for i, k in enumerate(kappa):
        out = out + k * dxx[..., i]
    return out


# ---------------------------------------------------------------------------
# solver


def _node_kappa(U: np.ndarray, grid: PeriodicGrid, visc: np.ndarray) -> np.ndarray:
    return np.maximum(visc, 0.5 * grid.h * np.abs(U))


def _generator(ops: _Operators, U_slice: np.ndarray, kap_slice: np.ndarray, d: int):
    n = U_slice[..., 0].size
    G = sp.csr_matrix((n, n))
    for i in range(d):
        G = G + ops.L[i].multiply(kap_slice[..., i].reshape(-1, 1))
        G = G + ops.D[i].multiply(U_slice[..., i].reshape(-1, 1))
    return G


def _factor(A: sp.spmatrix):
    return splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True})


def solve_theta(drift: VectorField, eps: float, grid: PeriodicGrid, tol: float = 1e-12,
                max_periods: int = 2000, viscosity: Sequence[float] | None = None,
                source: str = "") -> DensityField:
    """Stationary periodic density transported by ``drift`` with diffusion eps.

    ``viscosity`` overrides the per-axis diffusion (use the cell solution's
    kappa so the density is the exact discrete adjoint of its linearization).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if drift.grid != grid:
        raise ValueError("drift grid does not match")
    d = grid.d
    U = drift.stack()
    visc = np.full(d, float(eps)) if viscosity is None else np.asarray(viscosity, dtype=float)
    if visc.shape != (d,) or np.any(visc <= 0):
        raise ValueError("viscosity must be positive, one value per axis")
    kap = _node_kappa(U, grid, visc)
    ops = _Operators(grid)
    dt = grid.dt
    steady = all(np.array_equal(U[0], U[k]) for k in range(1, grid.n_t))
    lus = []
    for k in range(1 if steady else grid.n_t):
        G = _generator(ops, U[k], kap[k], d)
        lus.append(_factor(ops.I - dt * G.T))

    theta = np.ones(int(np.prod(grid.spatial_shape)))
    prev = None
    history: list[float] = []
    states = np.empty((grid.n_t, theta.size))
    for period in range(1, max_periods + 1):
        for j in range(1, grid.n_t + 1):
            node = j % grid.n_t
            theta = lus[0 if steady else node].solve(theta)
            states[node] = theta
        if np.min(states) < 0:
            raise NegativeDensity(f"negative density {np.min(states):.3e} in period {period}")
        if prev is not None:
            change = float(np.max(np.mean(np.abs(states - prev), axis=1)))
            history.append(change)
            if not np.isfinite(change):
                raise NonConvergence("density iteration produced non-finite values", history)
            if change < tol:
                break
        prev = states.copy()
    else:
        raise NonConvergence(f"density did not converge within {max_periods} periods", history)
    mass = states.mean(axis=1, keepdims=True)
    values = (states / mass).reshape(grid.shape)
    return DensityField(grid, values, float(eps), source, tuple(float(v) for v in visc),
                        period, tuple(history))


def stationarity_residual(theta: DensityField, drift: VectorField, eps: float,
                          mode: str = "discrete", modes: Sequence[Mode] | None = None,
                          per_mode: bool = False):
    """Max over the test dictionary of |int (psi_t + eps lap psi + U.D psi) dtheta|.

    ``discrete`` uses the difference operators the density was computed
    with (forward time difference, central gradient, node-wise diffusion), so
    a converged density gives rounding-level values. ``analytic`` uses exact
    derivatives of the test functions and the scheme's per-axis viscosity and
    measures the truncation error of the construction.
    """
    grid = theta.grid
    if drift.grid != grid:
        raise ValueError("grid mismatch")
    modes = dictionary(grid.d) if modes is None else tuple(modes)
    U = drift.stack()
    kappa = theta.kappa if theta.kappa else tuple(float(eps) for _ in range(grid.d))
    w = node_weights(theta.values)
    t, x = grid.mesh()
    values = []
    if mode == "analytic":
        for md in modes:
            values.append(weighted_sum(w, mode_generator(md, x, t, U, kappa)))
    elif mode == "discrete":
        kap = _node_kappa(U, grid, np.asarray(kappa))
        for md in modes:
            psi = md.value(x, t)
            g = forward_diff(psi, 0, grid.dt)
            for i in range(grid.d):
                g = g + U[..., i] * central_diff(psi, i + 1, grid.h)
                g = g + kap[..., i] * second_diff(psi, i + 1, grid.h)
            values.append(weighted_sum(w, g))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    values = np.abs(np.array(values))
    if per_mode:
        return {md.name: float(v) for md, v in zip(modes, values)}
    return float(values.max()) if values.size else 0.0

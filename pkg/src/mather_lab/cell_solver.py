"""Viscous time-periodic cell problem.

Solves

    phi_t + eps * lap(phi) + H(x, P + D phi, t) = Hbar_eps(P)

on T^{d+1} for a zero-mean periodic phi and the constant Hbar_eps(P).

The +eps*lap term makes the equation well posed backward in t, so the solver
marches u(., s) = phi(., -s) + Hbar * s in the reversed time s with implicit
Euler steps of size 1/n_t (one step per stored time slice, Newton per step).
In the original time variable the fixed point satisfies, at every node,

    Dt+ phi + sum_i kappa_i lap_i(phi) + H(x, P + Dc phi, t) = Hbar

with Dt+ the forward time difference, Dc the central difference and lap_i
the 3-point second difference. kappa_i = max(eps, alpha_i h / 2) is the
Lax-Friedrichs dissipation, alpha_i = sup |d H / d p_i| over the momentum
box; it equals eps whenever the physical viscosity already makes the scheme
monotone. Hbar is the per-period drift of u.

The linearization of this discrete equation is the generator whose adjoint
is marched by :mod:`mather_lab.fokker_planck`, which keeps the discrete
duality identities exact.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .hamiltonian import HamiltonianSpec, drift_bound, eval_bundle
from .torus_field import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    central_diff,
    forward_diff,
    second_diff,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "CellSolution",
    "NonConvergence",
    "CFLViolation",
    "solve_cell",
    "sweep_effective",
    "SweepReport",
    "solve_discounted",
    "p_derivative_fields",
    "PDerivatives",
    "cell_fields",
]


class NonConvergence(RuntimeError):
    def __init__(self, message: str, drift_history: Sequence[float] = ()):
        super().__init__(message)
        self.drift_history = list(drift_history)


class CFLViolation(RuntimeError):
    """Time step or grid too coarse for the requested problem."""


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.4
    drift_tol: float = 1e-8
    shape_tol: float = 1e-7
    max_periods: int = 5000
    p_box_margin: float = 1.0
    scheme: str = "lax_friedrichs"
    newton_tol: float = 1e-13
    newton_maxiter: int = 25

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        if self.drift_tol <= 0 or self.shape_tol <= 0 or self.newton_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_periods < 2:
            raise ValueError("max_periods must be at least 2")
        if self.scheme not in ("lax_friedrichs", "central"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def tight(cfg: SolverConfig) -> SolverConfig:
    """Configuration used when solutions are differenced in P."""
    return replace(cfg, drift_tol=min(cfg.drift_tol, 1e-12), shape_tol=min(cfg.shape_tol, 1e-11))


@dataclass(frozen=True)
class CellSolution:
    spec: HamiltonianSpec
    P: np.ndarray
    eps: float
    grid: PeriodicGrid
    phi: ScalarField
    hbar: float
    grad_phi: VectorField
    hess_phi: tuple
    phi_t: ScalarField
    laplacian: ScalarField
    drift: VectorField
    residual_rms: float
    physical_residual_rms: float
    p_sup: float
    kappa: tuple[float, ...]
    periods: int
    drift_history: tuple[float, ...]
    seconds: float

    @property
    def numerical_viscosity(self) -> float:
        return float(max(k - self.eps for k in self.kappa))

    def momentum(self) -> np.ndarray:
        """P + D phi on the grid, trailing axis d."""
        return self.P + self.grad_phi.stack()

    def hessian_array(self) -> np.ndarray:
        d = self.grid.d
        return np.stack([np.stack([self.hess_phi[i][j].values for j in range(d)], axis=-1)
                         for i in range(d)], axis=-2)

    def summary(self) -> dict:
        return {
            "spec": self.spec.name, "P": [float(v) for v in self.P], "eps": self.eps,
            "hbar": self.hbar, "p_sup": self.p_sup, "residual_rms": self.residual_rms,
            "physical_residual_rms": self.physical_residual_rms, "periods": self.periods,
            "kappa": list(self.kappa), "seconds": self.seconds,
        }


# ---------------------------------------------------------------------------
# sparse periodic operators on the flattened spatial grid


def _ring(n: int, h: float):
    i = np.arange(n)
    dc = sp.csr_matrix((np.r_[np.full(n, 0.5 / h), np.full(n, -0.5 / h)],
                        (np.r_[i, i], np.r_[(i + 1) % n, (i - 1) % n])), shape=(n, n))
    lap = sp.csr_matrix((np.r_[np.full(n, 1 / h ** 2), np.full(n, -2 / h ** 2), np.full(n, 1 / h ** 2)],
                         (np.r_[i, i, i], np.r_[(i + 1) % n, i, (i - 1) % n])), shape=(n, n))
    return dc, lap


class _Operators:
    def __init__(self, grid: PeriodicGrid):
        n, d = grid.n_x, grid.d
        dc, lap = _ring(n, grid.h)
        eye = sp.identity(n, format="csr")
        if d == 1:
            self.D = [dc]
            self.L = [lap]
        else:
            self.D = [sp.kron(dc, eye, format="csr"), sp.kron(eye, dc, format="csr")]
            self.L = [sp.kron(lap, eye, format="csr"), sp.kron(eye, lap, format="csr")]
        self.I = sp.identity(n ** d, format="csc")
        # one CSC pattern holding I, D_i and L_i; Jacobians are assembled on its data array
        pat = (self.I + sum(self.D) + sum(self.L)).tocsc()
        pat.sort_indices()
        self.N = n ** d
        self.indices, self.indptr = pat.indices.copy(), pat.indptr.copy()
        col = np.repeat(np.arange(self.N), np.diff(self.indptr))
        self.row = self.indices
        self._keys = col * self.N + self.indices
        self.I_data = self.aligned(self.I)
        self.D_data = [self.aligned(D) for D in self.D]
        self.L_data = [self.aligned(L) for L in self.L]

    def aligned(self, A) -> np.ndarray:
        """Values of A laid out on the shared pattern."""
        A = A.tocoo()
        out = np.zeros(self._keys.size)
        np.add.at(out, np.searchsorted(self._keys, A.col * self.N + A.row), A.data)
        return out

    def csc(self, data: np.ndarray):
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))


def _grad(u: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Central gradient of a spatial array (shape (n,)*d) -> (..., d)."""
    return np.stack([central_diff(u, ax, grid.h) for ax in range(grid.d)], axis=-1)


def _lap(u: np.ndarray, grid: PeriodicGrid, kappa) -> np.ndarray:
    return sum(k * second_diff(u, ax, grid.h) for ax, k in enumerate(kappa))


class _Stepper:
    """Implicit Euler step in reversed time with Newton (chord when possible)."""

    def __init__(self, spec, P, grid, cfg, x_spatial, discount=0.0):
        self.spec, self.P, self.grid, self.cfg = spec, P, grid, cfg
        self.x = x_spatial
        self.ops = _Operators(grid)
        self.discount = discount
        self.ds = grid.dt
        self.cache: dict[int, object] = {}
        self.kappa: tuple[float, ...] = ()
        self.max_speed = 0.0

    def set_kappa(self, kappa) -> None:
        kappa = tuple(float(k) for k in kappa)
        if kappa != self.kappa:
            self.cache.clear()
            self.kappa = kappa
            self.Lk_data = sum(k * L for k, L in zip(kappa, self.ops.L_data))

    def _residual(self, u, u_prev, tau, ds):
        b = eval_bundle(self.spec, self.x, self.P + _grad(u, self.grid), tau)
        F = u - u_prev - ds * (_lap(u, self.grid, self.kappa) + b.H - self.discount * u)
        return F, b

    def _jacobian(self, Hp, ds):
        ops = self.ops
        J = self.Lk_data.copy()
        for i in range(self.grid.d):
            J += Hp[..., i].ravel()[ops.row] * ops.D_data[i]
        J = (1.0 + ds * self.discount) * ops.I_data - ds * J
        return splu(ops.csc(J))

    def step(self, u_prev: np.ndarray, node: int, tau: float, ds: float | None = None,
             allow_cache: bool = True) -> np.ndarray:
        ds = self.ds if ds is None else ds
        shape = u_prev.shape
        u = u_prev.copy()
        F, b = self._residual(u, u_prev, tau, ds)
        tol = self.cfg.newton_tol * ds
        lu = self.cache.get(node) if allow_cache else None
        fresh = lu is None
        if fresh:
            lu = self._jacobian(b.Hp, ds)
        norm = float(np.max(np.abs(F)))
        for it in range(self.cfg.newton_maxiter):
            if norm <= tol:
                break
            du = lu.solve(F.ravel()).reshape(shape)
            u = u - du
            F, b = self._residual(u, u_prev, tau, ds)
            new = float(np.max(np.abs(F)))
            if new > 0.5 * norm:
                if new <= 1e3 * tol and new >= 0.9 * norm:
                    norm = new
                    break  # roundoff floor
                if not fresh or new > norm:
                    lu = self._jacobian(b.Hp, ds)
                    fresh = True
            norm = new
        else:
            if norm > 1e3 * tol:
                raise _NewtonFailure(norm / ds)
        if not np.all(np.isfinite(u)):
            raise _NewtonFailure(np.inf)
        if allow_cache:
            self.cache[node] = lu
        self.max_speed = max(self.max_speed, float(np.max(np.abs(b.Hp))))
        return u


class _NewtonFailure(RuntimeError):
    pass


def _box_kappa(spec, P, eps, grid, cfg, p_sup, discount_visc=None):
    radius = math.ceil(4.0 * (p_sup + cfg.p_box_margin)) / 4.0
    alpha = drift_bound(spec, radius)
    base = eps if discount_visc is None else discount_visc
    if cfg.scheme == "central":
        return tuple(base for _ in alpha), alpha
    return tuple(max(base, a * grid.h / 2.0) for a in alpha), alpha


def _march_period(stepper: _Stepper, u: np.ndarray, n_start: int, record: bool, cfg: SolverConfig):
    """Advance one period of reversed time; optionally record the node states."""
    grid = stepper.grid
    n_t = grid.n_t
    states = np.empty((n_t,) + u.shape) if record else None
    N = n_start
    for _ in range(n_t):
        if record:
            states[(-N) % n_t] = u
        node = (-(N + 1)) % n_t
        tau = node / n_t
        try:
            u = stepper.step(u, node, tau)
        except _NewtonFailure:
            if record:
                raise CFLViolation("Newton failed inside the recorded period; refine n_t")
            u = _substep(stepper, u, N, cfg)
        N += 1
    return u, states, N


def _substep(stepper: _Stepper, u: np.ndarray, N: int, cfg: SolverConfig) -> np.ndarray:
    """Fallback for a failed burn-in step: split it by the Courant ratio."""
    grid = stepper.grid
    courant = stepper.ds * max(stepper.max_speed, 1e-12) / grid.h
    k = max(2, int(math.ceil(courant / cfg.cfl)))
    sub = stepper.ds / k
    t_start = ((-N) % grid.n_t) / grid.n_t
    for j in range(1, k + 1):
        tau = (t_start - j * sub) % 1.0
        try:
            u = stepper.step(u, -1, tau, ds=sub, allow_cache=False)
        except _NewtonFailure:
            raise CFLViolation(f"Newton failed even with {k} substeps; grid too coarse") from None
    return u


def cell_fields(spec, P, grid, phi_arr, hbar, kappa, eps):
    """Derivative fields and residuals of a periodic node array phi."""
    h = grid.h
    d = grid.d
    grad = np.stack([central_diff(phi_arr, ax, h) for ax in range(1, d + 1)], axis=-1)
    phi_t = forward_diff(phi_arr, 0, grid.dt)
    lap_axes = [second_diff(phi_arr, ax, h) for ax in range(1, d + 1)]
    lap = sum(lap_axes)
    t, x = grid.mesh()
    b = eval_bundle(spec, x, P + grad, t)
    res = phi_t + sum(k * la for k, la in zip(kappa, lap_axes)) + b.H - hbar
    phys = phi_t + eps * lap + b.H - hbar
    hess = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            if i == j:
                m = lap_axes[i]
            else:
                m = 0.5 * (central_diff(central_diff(phi_arr, i + 1, h), j + 1, h)
                           + central_diff(central_diff(phi_arr, j + 1, h), i + 1, h))
            sf = ScalarField(grid, m)
            hess[i][j] = sf
            hess[j][i] = sf
    return {
        "grad": grad, "phi_t": phi_t, "lap": lap, "Hp": b.Hp,
        "hess": tuple(tuple(r) for r in hess),
        "residual_rms": float(np.sqrt(np.mean(res ** 2))),
        "physical_residual_rms": float(np.sqrt(np.mean(phys ** 2))),
    }


def _check_oscillation(history: list[float], tol: float) -> None:
    if len(history) < 8:
        return
    last = history[-7:]
    diffs = np.diff(last)
    alternating = np.all(diffs[:-1] * diffs[1:] < 0)
    two_cycle = abs(last[-1] - last[-3]) < tol and abs(last[-2] - last[-4]) < tol
    if alternating and two_cycle and np.all(np.abs(diffs) > tol):
        raise NonConvergence("drift oscillates between two accumulation points", history)


def solve_cell(spec: HamiltonianSpec, P, eps: float, grid: PeriodicGrid,
               cfg: SolverConfig | None = None, init: np.ndarray | None = None,
               kappa: Sequence[float] | None = None) -> CellSolution:
    """Solve the viscous cell problem for (phi_eps, Hbar_eps(P)).

    ``init`` is an optional warm start (node array on ``grid``; only its
    t = 0 slice is used). ``kappa`` freezes the per-axis diffusion instead of
    re-estimating it from the momentum box each period.
    """
    cfg = cfg or SolverConfig()
    if not eps > 0:
        raise ValueError("eps must be positive")
    if spec.d != grid.d:
        raise ValueError("spec and grid dimensions differ")
    P = np.atleast_1d(np.asarray(P, dtype=float))
    if P.shape != (spec.d,):
        raise ValueError("P dimension mismatch")
    t0 = time.perf_counter()
    _, xg = grid.mesh()
    x_spatial = xg[0]
    stepper = _Stepper(spec, P, grid, cfg, x_spatial)

    u = np.zeros(grid.spatial_shape) if init is None else np.array(init, dtype=float)[0].copy()
    u -= u.mean()
    frozen = kappa is not None
    history: list[float] = []
    period_start = u.copy()
    N = 0
    converged_shape = False
    for period in range(1, cfg.max_periods + 1):
        p_sup = float(np.max(np.abs(P + _grad(u, grid))))
        if frozen:
            stepper.set_kappa(kappa)
        else:
            kap, alpha = _box_kappa(spec, P, eps, grid, cfg, p_sup)
            if cfg.scheme == "central" and np.any(alpha * grid.h > 2 * eps):
                observed = float(np.max(np.abs(stepper_speed(spec, P, x_spatial, u, grid))))
                if observed * grid.h > 2 * eps:
                    raise CFLViolation(
                        f"cell Peclet number {observed * grid.h / (2 * eps):.3g} > 1; refine n_x")
            stepper.set_kappa(kap)
        record = converged_shape
        u_new, states, N_new = _march_period(stepper, u, N, record, cfg)
        lam = float(np.mean(u_new - period_start))
        shape_change = float(np.max(np.abs((u_new - u_new.mean()) - (period_start - period_start.mean()))))
        history.append(lam)
        if not np.isfinite(lam):
            raise NonConvergence("non-finite drift", history)
        _check_oscillation(history, cfg.drift_tol)
        drift_ok = len(history) >= 2 and abs(history[-1] - history[-2]) < cfg.drift_tol
        if record:
            # node j holds u^{N+k} with k = (-j) mod n_t; remove the drift accumulated so far
            k_of_node = (-np.arange(grid.n_t)) % grid.n_t
            phi_arr = states - lam * grid.dt * k_of_node.reshape((-1,) + (1,) * grid.d)
            phi_arr = phi_arr - phi_arr.mean()
            fields = cell_fields(spec, P, grid, phi_arr, lam, stepper.kappa, eps)
            if drift_ok and fields["residual_rms"] <= 10 * cfg.drift_tol:
                return _assemble(spec, P, eps, grid, phi_arr, lam, fields, stepper.kappa,
                                 period, history, time.perf_counter() - t0)
        converged_shape = drift_ok and shape_change < cfg.shape_tol
        shift = u_new.mean()
        u = u_new - shift
        period_start = u.copy()
        N = N_new
    raise NonConvergence(f"no convergence within {cfg.max_periods} periods", history)


def stepper_speed(spec, P, x_spatial, u, grid):
    return eval_bundle(spec, x_spatial, P + _grad(u, grid), 0.0).Hp


def _assemble(spec, P, eps, grid, phi_arr, hbar, fields, kappa, periods, history, seconds):
    t, x = grid.mesh()
    drift = eval_bundle(spec, x, P + fields["grad"], t).Hp
    p_sup = float(np.max(np.abs(P + fields["grad"])))
    return CellSolution(
        spec=spec, P=P.copy(), eps=float(eps), grid=grid,
        phi=ScalarField(grid, phi_arr), hbar=float(hbar),
        grad_phi=VectorField.from_array(grid, fields["grad"]),
        hess_phi=fields["hess"],
        phi_t=ScalarField(grid, fields["phi_t"]),
        laplacian=ScalarField(grid, fields["lap"]),
        drift=VectorField.from_array(grid, drift),
        residual_rms=fields["residual_rms"],
        physical_residual_rms=fields["physical_residual_rms"],
        p_sup=p_sup, kappa=tuple(kappa), periods=periods,
        drift_history=tuple(history), seconds=seconds,
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    P: tuple[float, ...]
    eps: float
    hbar: float = float("nan")
    p_sup: float = float("nan")
    residual_rms: float = float("nan")
    periods: int = 0
    seconds: float = 0.0
    error: str | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow]
    solutions: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path: str | Path, with_seconds: bool = True) -> Path:
        """Write the table; ``with_seconds=False`` leaves out the wall-time column."""
        path = Path(path)
        d = len(self.rows[0].P) if self.rows else 1
        header = ([f"P{i + 1}" for i in range(d)] if d > 1 else ["P"]) + [
            "eps", "hbar", "p_sup", "residual_rms", "periods"] + (["seconds"] if with_seconds else [])
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.rows:
                w.writerow([f"{v:.17g}" for v in r.P] + [
                    f"{r.eps:.17g}", f"{r.hbar:.17g}", f"{r.p_sup:.17g}",
                    f"{r.residual_rms:.17g}", str(r.periods)]
                    + ([f"{r.seconds:.6f}"] if with_seconds else []))
        return path


def sweep_effective(spec: HamiltonianSpec, P_list, eps_list, grid: PeriodicGrid,
                    cfg: SolverConfig | None = None, warm_start: bool = True,
                    keep_solutions: bool = False) -> SweepReport:
    """H̄^eps(P) over a (P, eps) table, rows sorted by P then eps descending."""
    cfg = cfg or SolverConfig()
    if len(P_list) == 0 or len(eps_list) == 0:
        raise ValueError("P_list and eps_list must be nonempty")
    Ps = sorted((tuple(np.atleast_1d(np.asarray(P, dtype=float)).tolist()) for P in P_list))
    epss = sorted((float(e) for e in eps_list), reverse=True)
    rows: list[SweepRow] = []
    sols = {}
    for P in Ps:
        prev = None
        for eps in epss:
            row = SweepRow(P=P, eps=eps)
            try:
                sol = solve_cell(spec, np.array(P), eps, grid, cfg, init=prev)
            except (NonConvergence, CFLViolation) as exc:
                row.error = f"{type(exc).__name__}: {exc}"
                logger.warning("cell P=%s eps=%g failed: %s", P, eps, exc)
                prev = None
            else:
                row.hbar, row.p_sup, row.residual_rms = sol.hbar, sol.p_sup, sol.residual_rms
                row.periods, row.seconds = sol.periods, sol.seconds
                prev = sol.phi.values if warm_start else None
                if keep_solutions:
                    sols[(P, eps)] = sol
            rows.append(row)
    return SweepReport(rows, sols)


# ---------------------------------------------------------------------------
# discounted problem with unit viscosity


def solve_discounted(spec: HamiltonianSpec, grid: PeriodicGrid, discount: float,
                     cfg: SolverConfig | None = None, P=None) -> tuple[ScalarField, float]:
    """Periodic solution of phi_t + lap(phi) + H(x, P + D phi, t) - discount * phi = 0.

    Returns ``(phi, mean(discount * phi))``. The spatial mean obeys a linear
    recursion decoupled from the mean-free part, so after each period it is
    moved to its periodic fixed point exactly instead of waiting for the slow
    e^{-discount * s} relaxation.
    """
    cfg = cfg or SolverConfig()
    if not discount > 0:
        raise ValueError("discount must be positive")
    P = np.zeros(spec.d) if P is None else np.atleast_1d(np.asarray(P, dtype=float))
    _, xg = grid.mesh()
    stepper = _Stepper(spec, P, grid, cfg, xg[0], discount=discount)
    u = np.zeros(grid.spatial_shape)
    a = (1.0 + grid.dt * discount) ** (-grid.n_t)
    prev_shape = None
    for period in range(1, cfg.max_periods + 1):
        p_sup = float(np.max(np.abs(P + _grad(u, grid))))
        kap, _ = _box_kappa(spec, P, 1.0, grid, cfg, p_sup, discount_visc=1.0)
        stepper.set_kappa(kap)
        c0 = u.mean()
        converged = prev_shape is not None and np.max(np.abs(u - u.mean() - prev_shape)) < cfg.shape_tol
        prev_shape = u - u.mean()
        u_new, states, _ = _march_period(stepper, u, 0, converged, cfg)
        b = u_new.mean() - a * c0
        c_star = b / (1.0 - a)
        if converged:
            # shift every recorded slice by its fixed-point mean correction
            k_of_node = (-np.arange(grid.n_t)) % grid.n_t
            decay = (1.0 + grid.dt * discount) ** (-k_of_node.astype(float))
            shift = (c_star - c0) * decay
            phi = states + shift.reshape((-1,) + (1,) * grid.d)
            return ScalarField(grid, phi), float(np.mean(discount * phi))
        u = u_new + (c_star - u_new.mean())
    raise NonConvergence("discounted problem did not converge")


# ---------------------------------------------------------------------------
# derivatives in P


@dataclass(frozen=True)
class PDerivatives:
    center: CellSolution
    h: float
    dphi: tuple[ScalarField, ...]       # D_{P_i} phi
    dhbar: np.ndarray                   # D_P Hbar
    d2phi: tuple[ScalarField, ...]      # D_{P_i P_i} phi
    d2hbar: np.ndarray                  # D_{P_i P_i} Hbar


def p_derivative_fields(spec: HamiltonianSpec, P, eps: float, grid: PeriodicGrid,
                        cfg: SolverConfig | None = None, h: float = 1e-3,
                        center: CellSolution | None = None) -> PDerivatives:
    """Centered differences in P of zero-mean solutions.

    The three solves share the diffusion coefficients of the center solve,
    so the difference quotients differentiate one smooth discrete problem.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    cfg = tight(cfg or SolverConfig())
    P = np.atleast_1d(np.asarray(P, dtype=float))
    if center is None:
        center = solve_cell(spec, P, eps, grid, cfg)
    elif center.residual_rms > 10 * cfg.drift_tol:
        center = solve_cell(spec, P, eps, grid, cfg, init=center.phi.values, kappa=center.kappa)
    dphi, d2phi, dh, d2h = [], [], [], []
    for i in range(spec.d):
        e = np.zeros(spec.d)
        e[i] = h
        plus = solve_cell(spec, P + e, eps, grid, cfg, init=center.phi.values, kappa=center.kappa)
        minus = solve_cell(spec, P - e, eps, grid, cfg, init=center.phi.values, kappa=center.kappa)
        fp, f0, fm = plus.phi.values, center.phi.values, minus.phi.values
        dphi.append(ScalarField(grid, (fp - fm) / (2 * h)))
        d2phi.append(ScalarField(grid, (fp - 2 * f0 + fm) / h ** 2))
        dh.append((plus.hbar - minus.hbar) / (2 * h))
        d2h.append((plus.hbar - 2 * center.hbar + minus.hbar) / h ** 2)
    return PDerivatives(center, h, tuple(dphi), np.array(dh), tuple(d2phi), np.array(d2h))

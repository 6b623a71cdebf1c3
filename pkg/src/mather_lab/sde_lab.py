"""Monte Carlo realization of the viscous measure.

Paths follow dX = U(X, t) dt + sqrt(2 eps) dW (Euler-Maruyama, X wrapped to
the torus) and carry the momentum p = P + D phi(X, t) read off the graph.

Noise is counter based: path block b uses a Philox stream keyed by
(seed, b); the normals of step s for that block sit at a fixed position of
the stream (chunk counter + offset). Results therefore do not depend on how
paths are scheduled.

Long-time averages are accumulated for the Fourier features
z^k q(p) with z = exp(2 pi i x); folding sample times by their phase in the
period lets every observable psi_{k,m}(x, t) q(p) be recovered afterwards by
weighting the phase bins with exp(2 pi i m t). Paths are pooled into groups
and standard errors are batch means over groups.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .cell_solver import CellSolution
from .hamiltonian import eval_bundle
from .measures import Observable, SupportLeak, _gram

__all__ = [
    "TrajectoryBatch",
    "EmpiricalResult",
    "AccuracyGuard",
    "simulate",
    "empirical_measure",
    "dynkin_residual",
    "gaussian_block",
    "momentum_increment_check",
]

TWO_PI = 2.0 * np.pi
BLOCK = 1024          # paths per noise stream
CHUNK = 128           # steps per counter value
_INIT_COUNTER = 2 ** 63


class AccuracyGuard(ValueError):
    """dt too large for the drift resolution, or horizon too short."""


def _philox(seed: int, block: int, counter_hi: int) -> np.random.Philox:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)
    counter = np.array([0, counter_hi, 0, 0], dtype=np.uint64)
    return np.random.Philox(key=key, counter=counter)


def gaussian_block(seed: int, block: int, chunk: int, n_steps: int, width: int) -> np.ndarray:
    """Standard normals for ``n_steps`` consecutive steps of one path block.

    The stream is keyed by (seed, block) and starts at counter ``chunk``, so
    the returned (n_steps, width) array is a pure function of its arguments.
    """
    return np.random.Generator(_philox(seed, block, chunk)).standard_normal((n_steps, width))


class _Noise:
    def __init__(self, seed: int, n_paths: int, d: int):
        self.seed, self.n_paths, self.d = seed, n_paths, d
        self.n_blocks = -(-n_paths // BLOCK)
        self.width = BLOCK * d

    def chunk(self, c: int) -> np.ndarray:
        """Normals for steps [c CHUNK, (c + 1) CHUNK): shape (CHUNK, n_paths, d)."""
        parts = [gaussian_block(self.seed, b, c, CHUNK, self.width).reshape(CHUNK, BLOCK, self.d)
                 for b in range(self.n_blocks)]
        return np.ascontiguousarray(np.concatenate(parts, axis=1)[:, : self.n_paths])

    def initial(self) -> np.ndarray:
        parts = [np.random.Generator(_philox(self.seed, b, _INIT_COUNTER)).random((BLOCK, self.d))
                 for b in range(self.n_blocks)]
        return np.concatenate(parts)[: self.n_paths]


@njit(cache=True)
def _advance1(X, U, s0, nsteps, dt, sig, Z):
    nt = U.shape[0]
    nx = U.shape[1]
    n = X.shape[0]
    for j in range(nsteps):
        jt = 0
        jt1 = 0
        wt = 0.0
        if nt > 1:
            t = (s0 + j) * dt
            a = (t - np.floor(t)) * nt
            jt = int(np.floor(a))
            wt = a - jt
            jt = jt % nt
            jt1 = (jt + 1) % nt
        for i in range(n):
            x = X[i, 0]
            pos = x * nx
            fl = np.floor(pos)
            w = pos - fl
            i0 = int(fl)
            if i0 >= nx:
                i0 -= nx
            i1 = i0 + 1
            if i1 == nx:
                i1 = 0
            u = (1.0 - w) * U[jt, i0, 0] + w * U[jt, i1, 0]
            if nt > 1:
                u1 = (1.0 - w) * U[jt1, i0, 0] + w * U[jt1, i1, 0]
                u = (1.0 - wt) * u + wt * u1
            x = x + u * dt + sig * Z[j, i, 0]
            X[i, 0] = x - np.floor(x)


@njit(cache=True)
def _bilinear(U, jt, i0, i1, k0, k1, w, v, c):
    return ((1.0 - w) * ((1.0 - v) * U[jt, i0, k0, c] + v * U[jt, i0, k1, c])
            + w * ((1.0 - v) * U[jt, i1, k0, c] + v * U[jt, i1, k1, c]))


@njit(cache=True)
def _advance2(X, U, s0, nsteps, dt, sig, Z):
    nt = U.shape[0]
    nx = U.shape[1]
    n = X.shape[0]
    for j in range(nsteps):
        jt = 0
        jt1 = 0
        wt = 0.0
        if nt > 1:
            t = (s0 + j) * dt
            a = (t - np.floor(t)) * nt
            jt = int(np.floor(a))
            wt = a - jt
            jt = jt % nt
            jt1 = (jt + 1) % nt
        for i in range(n):
            x = X[i, 0]
            y = X[i, 1]
            px = x * nx
            py = y * nx
            fx = np.floor(px)
            fy = np.floor(py)
            w = px - fx
            v = py - fy
            i0 = int(fx) % nx
            i1 = (i0 + 1) % nx
            k0 = int(fy) % nx
            k1 = (k0 + 1) % nx
            ux = _bilinear(U, jt, i0, i1, k0, k1, w, v, 0)
            uy = _bilinear(U, jt, i0, i1, k0, k1, w, v, 1)
            if nt > 1:
                ux = (1.0 - wt) * ux + wt * _bilinear(U, jt1, i0, i1, k0, k1, w, v, 0)
                uy = (1.0 - wt) * uy + wt * _bilinear(U, jt1, i0, i1, k0, k1, w, v, 1)
            x = x + ux * dt + sig * Z[j, i, 0]
            y = y + uy * dt + sig * Z[j, i, 1]
            X[i, 0] = x - np.floor(x)
            X[i, 1] = y - np.floor(y)


# ---------------------------------------------------------------------------
# interpolation of node fields along paths


class _Interp:
    """Periodic multilinear interpolation of node fields (n_t, n_x[, n_x], k)."""

    def __init__(self, grid, fields: np.ndarray):
        self.grid = grid
        self.f = fields
        self.steady = all(np.array_equal(fields[0], fields[j]) for j in range(1, grid.n_t))

    def slice_at(self, t: float) -> np.ndarray:
        if self.steady:
            return self.f[0]
        a = (t % 1.0) * self.grid.n_t
        j = int(math.floor(a))
        w = a - j
        j %= self.grid.n_t
        if w < 1e-12:
            return self.f[j]
        return (1.0 - w) * self.f[j] + w * self.f[(j + 1) % self.grid.n_t]

    def at(self, sl: np.ndarray, X: np.ndarray) -> np.ndarray:
        n = self.grid.n_x
        pos = X * n
        fl = np.floor(pos)
        w = pos - fl
        i0 = fl.astype(np.int64) % n
        i1 = (i0 + 1) % n
        if self.grid.d == 1:
            wa = w[:, 0:1]
            return (1.0 - wa) * sl[i0[:, 0]] + wa * sl[i1[:, 0]]
        wa, wb = w[:, 0:1], w[:, 1:2]
        return ((1.0 - wa) * ((1.0 - wb) * sl[i0[:, 0], i0[:, 1]] + wb * sl[i0[:, 0], i1[:, 1]])
                + wa * ((1.0 - wb) * sl[i1[:, 0], i0[:, 1]] + wb * sl[i1[:, 0], i1[:, 1]]))


# ---------------------------------------------------------------------------
# feature bookkeeping


def _q_list(d: int) -> list[tuple[int, ...]]:
    return [()] + [(k,) for k in range(d)] + [(k, j) for k in range(d) for j in range(k, d)]


def _k_list(d: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(-2, 3), repeat=d))


def _q_parts(p: np.ndarray, qs):
    """q(p), Dq and D^2 q for every q in qs: shapes (N, nq), (N, nq, d), (N, nq, d, d)."""
    N, d = p.shape
    nq = len(qs)
    q = np.empty((N, nq))
    dq = np.zeros((N, nq, d))
    ddq = np.zeros((N, nq, d, d))
    for a, idx in enumerate(qs):
        if not idx:
            q[:, a] = 1.0
        elif len(idx) == 1:
            q[:, a] = p[:, idx[0]]
            dq[:, a, idx[0]] = 1.0
        else:
            k, j = idx
            q[:, a] = p[:, k] * p[:, j]
            dq[:, a, k] += p[:, j]
            dq[:, a, j] += p[:, k]
            ddq[:, a, k, j] += 1.0
            ddq[:, a, j, k] += 1.0
    return q, dq, ddq


def _zpowers(X: np.ndarray, ks) -> np.ndarray:
    """exp(2 pi i k.X) for every k: (N, nk)."""
    N, d = X.shape
    z = np.exp(1j * TWO_PI * X)                       # (N, d)
    pw = np.empty((N, d, 5), dtype=complex)
    pw[:, :, 2] = 1.0
    pw[:, :, 3] = z
    pw[:, :, 4] = z * z
    pw[:, :, 1] = np.conj(z)
    pw[:, :, 0] = np.conj(pw[:, :, 4])
    out = np.ones((N, len(ks)), dtype=complex)
    for a, k in enumerate(ks):
        for i, ki in enumerate(k):
            out[:, a] = out[:, a] * pw[:, i, ki + 2]
    return out


@dataclass(frozen=True)
class TrajectoryBatch:
    n_paths: int
    dt: float
    T: int
    seed: int
    burn_in: int
    eps: float
    P: np.ndarray
    d: int
    sample_every: int
    n_groups: int
    n_phases: int
    samples_per_path: int
    ks: tuple
    qs: tuple
    kappa: tuple
    S_val: np.ndarray       # (G, phases, nk, nq) complex sums of z^k q
    S_gen: np.ndarray       # (G, phases, nk, nq) complex sums of z^k G_{k,q}
    start: np.ndarray       # (G, nk, nq) sums of z^k q at the first recorded time
    end: np.ndarray         # (G, nk, nq) at the horizon
    X_end: np.ndarray
    p_end: np.ndarray
    p_max: float

    @property
    def horizon(self) -> float:
        return float(self.T - self.burn_in)

    def summary(self) -> dict:
        return {"n_paths": self.n_paths, "dt": self.dt, "T": self.T, "seed": self.seed,
                "burn_in": self.burn_in, "eps": self.eps, "P": [float(v) for v in self.P],
                "sample_every": self.sample_every, "n_groups": self.n_groups,
                "p_max": self.p_max}


def _group_count(n_paths: int) -> int:
    if n_paths <= 200:
        return n_paths
    for g in range(200, 19, -1):
        if n_paths % g == 0:
            return g
    raise AccuracyGuard("n_paths > 200 must have a divisor between 20 and 200")


def simulate(cell: CellSolution, n_paths: int, dt: float, T: int, seed: int, burn_in: int = 10,
             sample_every: int = 50, x0=None, eps: float | None = None) -> TrajectoryBatch:
    """Euler-Maruyama paths driven by the cell's drift.

    ``eps`` overrides the noise level (0 gives the deterministic flow);
    ``x0`` fixes a common starting point, otherwise starts are uniform.
    """
    grid = cell.grid
    d = grid.d
    eps = cell.eps if eps is None else float(eps)
    if n_paths < 1 or eps < 0 or dt <= 0:
        raise ValueError("invalid n_paths, dt or eps")
    if int(T) != T or T < burn_in + 10:
        raise AccuracyGuard("T must be whole periods with T >= burn_in + 10")
    spp = round(1.0 / dt)
    if abs(spp * dt - 1.0) > 1e-12 or spp % sample_every:
        raise AccuracyGuard("1/dt must be an integer multiple of sample_every")
    U_nodes = cell.drift.stack()
    u_sup = float(np.max(np.abs(U_nodes)))
    if u_sup > 0 and dt > grid.h / (2.0 * u_sup) * (1 + 1e-12):
        raise AccuracyGuard(f"dt={dt} exceeds h/(2 sup|U|)={grid.h / (2 * u_sup):.3g}")

    G = _group_count(n_paths)
    per = n_paths // G
    n_phases = spp // sample_every
    ks, qs = _k_list(d), _q_list(d)
    kvec = np.array(ks, dtype=float)                          # (nk, d)
    kappa = np.array(cell.kappa, dtype=float)
    lap_k = -(TWO_PI ** 2) * (kvec ** 2 @ kappa)               # (nk,)
    kk = kvec * kappa                                          # (nk, d)

    drift_i = _Interp(grid, U_nodes)
    grad_i = _Interp(grid, cell.grad_phi.stack())
    hess_i = _Interp(grid, cell.hessian_array().reshape(grid.shape + (d * d,)))

    noise = _Noise(seed, n_paths, d)
    X = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy() if x0 is not None \
        else noise.initial()
    X %= 1.0
    sig = math.sqrt(2.0 * eps * dt)
    S_val = np.zeros((G, n_phases, len(ks), len(qs)), dtype=complex)
    S_gen = np.zeros_like(S_val)
    start = end = None
    p_max = 0.0
    n_steps = int(T) * spp
    first = burn_in * spp

    advance = _advance1 if d == 1 else _advance2
    U_run = np.ascontiguousarray(U_nodes[:1] if drift_i.steady else U_nodes)
    Z = np.zeros((CHUNK, n_paths, d))
    chunk = -1
    nk, nq = len(ks), len(qs)

    def group(a):
        return a.reshape(G, per, nk, nq).sum(axis=1)

    s = 0
    while True:
        if s >= first and (s - first) % sample_every == 0:
            t = s * dt
            p = cell.P + grad_i.at(grad_i.slice_at(t), X)
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite momentum along a path")
            p_max = max(p_max, float(np.max(np.abs(p))))
            z = _zpowers(X, ks)
            q, dq, ddq = _q_parts(p, qs)
            feats = z[:, :, None] * q[:, None, :]
            if s == first:
                start = group(feats)
            if s == n_steps:
                end = group(feats)
                break
            U = drift_i.at(drift_i.slice_at(t), X)
            H = eval_bundle(cell.spec, X, p, np.full(n_paths, t % 1.0))
            hess = hess_i.at(hess_i.slice_at(t), X).reshape(n_paths, d, d)
            gram = _gram(hess, kappa)
            # generator of z^k q without the time-frequency part
            gen = (1j * TWO_PI * (U @ kvec.T) + lap_k)[:, :, None] * q[:, None, :]
            gen -= (dq @ H.Hx[:, :, None])[:, None, :, 0]
            kh = kk @ hess                                           # sum_i kappa_i k_i hess_ij
            gen += 2j * TWO_PI * (kh @ dq.transpose(0, 2, 1))
            gen += (ddq.reshape(n_paths, nq, d * d) @ gram.reshape(n_paths, d * d, 1))[:, None, :, 0]
            ph = ((s - first) // sample_every) % n_phases
            S_val[:, ph] += group(feats)
            S_gen[:, ph] += group(z[:, :, None] * gen)
        if s < first:
            nxt = first
        else:
            nxt = s + sample_every - (s - first) % sample_every
        stop = min(nxt, (s // CHUNK + 1) * CHUNK, n_steps)
        if sig and s // CHUNK != chunk:
            chunk = s // CHUNK
            Z = noise.chunk(chunk)
        off = s % CHUNK
        advance(X, U_run, s, stop - s, dt, sig, Z[off: off + stop - s])
        if not np.all(np.isfinite(X)):
            raise FloatingPointError("non-finite path state")
        s = stop

    t_end = n_steps * dt
    p_end = cell.P + grad_i.at(grad_i.slice_at(t_end), X)
    samples = (n_steps - first) // sample_every
    return TrajectoryBatch(n_paths, dt, int(T), int(seed), int(burn_in), eps, cell.P.copy(), d,
                           sample_every, G, n_phases, samples, tuple(ks), tuple(qs),
                           tuple(cell.kappa), S_val, S_gen, start, end, X, p_end, p_max)


# ---------------------------------------------------------------------------
# reading observables out of a batch


@dataclass(frozen=True)
class EmpiricalResult:
    names: tuple[str, ...]
    mean: np.ndarray
    se: np.ndarray

    def to_json(self) -> str:
        rows = {n: {"mean": float(m), "se": float(s)} for n, m, s in zip(self.names, self.mean, self.se)}
        return json.dumps(rows, sort_keys=True)


def _locate(batch: TrajectoryBatch, obs: Observable):
    if obs.mode is None:
        k, m, real = (0,) * batch.d, 0, True
    else:
        k, m, real = obs.mode.k, obs.mode.m, obs.mode.kind == "cos"
    return batch.ks.index(tuple(k)), batch.qs.index(tuple(obs.q)), m, real


def _phase_weights(batch: TrajectoryBatch, m: int) -> np.ndarray:
    ph = np.arange(batch.n_phases) * batch.sample_every * batch.dt
    return np.exp(1j * TWO_PI * m * ph)


def _group_stats(vals: np.ndarray) -> tuple[float, float]:
    G = vals.size
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(G)) if G > 1 else float("nan")
    return mean, se


def _part(z: np.ndarray, real: bool) -> np.ndarray:
    return z.real if real else z.imag


def empirical_measure(batch: TrajectoryBatch, observables: Sequence[Observable]) -> EmpiricalResult:
    """Long-time path averages with batch-means standard errors."""
    per = batch.n_paths // batch.n_groups
    norm = per * batch.samples_per_path
    means, ses, names = [], [], []
    for obs in observables:
        if batch.p_max > obs.radius:
            raise SupportLeak(f"paths reached |p| = {batch.p_max:.4g} > {obs.radius:g}")
        ki, qi, m, real = _locate(batch, obs)
        y = batch.S_val[:, :, ki, qi] @ _phase_weights(batch, m)
        mu, se = _group_stats(_part(y, real) / norm)
        means.append(mu)
        ses.append(se)
        names.append(obs.name)
    return EmpiricalResult(tuple(names), np.array(means), np.array(ses))


def dynkin_residual(batch: TrajectoryBatch, observables: Sequence[Observable]) -> EmpiricalResult:
    """(1/T) E[phi(end) - phi(start)] - (1/T) E int A phi dt, per observable.

    ``mean`` holds the signed residual and ``se`` its batch-means standard error.
    """
    per = batch.n_paths // batch.n_groups
    T = batch.horizon
    samples = batch.samples_per_path
    means, ses, names = [], [], []
    for obs in observables:
        if batch.p_max > obs.radius:
            raise SupportLeak(f"paths reached |p| = {batch.p_max:.4g} > {obs.radius:g}")
        ki, qi, m, real = _locate(batch, obs)
        w = _phase_weights(batch, m)
        gen = (batch.S_gen[:, :, ki, qi] + 1j * TWO_PI * m * batch.S_val[:, :, ki, qi]) @ w
        gen_avg = _part(gen, real) / (per * samples)
        # boundary values: start at time burn_in, end at T, both integers, so phase 1
        bd = _part(batch.end[:, ki, qi] - batch.start[:, ki, qi], real) / per
        mu, se = _group_stats(bd / T - gen_avg)
        means.append(mu)
        ses.append(se)
        names.append(obs.name)
    return EmpiricalResult(tuple(names), np.array(means), np.array(ses))


def momentum_increment_check(cell: CellSolution, n_paths: int, dt: float, seed: int,
                             t0: float = 0.0):
    """One-step check of the implied momentum equation.

    Returns (mean of (dp + H_x dt)/dt, its standard error) per axis for paths
    started from the density-free uniform cloud at time t0; the mean should be
    O(dt + h^2) and the standard error matches sqrt(2 eps |D^2 phi|^2 / dt).
    """
    grid = cell.grid
    d = grid.d
    noise = _Noise(seed, n_paths, d)
    X = noise.initial()
    grad_i = _Interp(grid, cell.grad_phi.stack())
    drift_i = _Interp(grid, cell.drift.stack())
    p0 = cell.P + grad_i.at(grad_i.slice_at(t0), X)
    U = drift_i.at(drift_i.slice_at(t0), X)
    X1 = (X + U * dt + math.sqrt(2 * cell.eps * dt) * noise.chunk(0)[0]) % 1.0
    p1 = cell.P + grad_i.at(grad_i.slice_at(t0 + dt), X1)
    Hx = eval_bundle(cell.spec, X, p0, np.full(n_paths, t0 % 1.0)).Hx
    r = (p1 - p0 + Hx * dt) / dt
    return r.mean(axis=0), r.std(axis=0, ddof=1) / math.sqrt(n_paths)

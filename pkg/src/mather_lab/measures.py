"""Graph measures, expectations and the dissipation matrix.

The measure at viscosity eps is the pushforward of the density onto the
graph p = P + D phi(x, t). It is represented by one particle per grid node,
so expectations are plain weighted sums in node order and share their
quadrature with the density-side integrals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cell_solver import CellSolution
from .fokker_planck import DensityField, Mode, dictionary, mode_generator, node_weights, weighted_sum
from .hamiltonian import eval_bundle

__all__ = [
    "GraphMeasure",
    "DissipationMatrix",
    "Observable",
    "SupportLeak",
    "bump",
    "build_measure",
    "expectation",
    "project_check",
    "dissipation_matrix",
    "observable_dictionary",
    "generator_terms",
    "support_radius",
]


class SupportLeak(RuntimeError):
    """Some particle lies outside the flat region of the momentum cutoff."""


@dataclass(frozen=True)
class GraphMeasure:
    x: np.ndarray          # (N, d)
    t: np.ndarray          # (N,)
    p: np.ndarray          # (N, d)
    w: np.ndarray          # (N,)
    node: np.ndarray       # flat node index of each particle
    eps: float
    P: np.ndarray
    cell_id: str
    theta_id: str

    def __post_init__(self) -> None:
        for name in ("x", "t", "p", "w", "node", "P"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.w < 0):
            raise ValueError("negative particle weight")

    def __len__(self) -> int:
        return int(self.w.size)

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    def total_weight(self) -> float:
        return float(np.sum(self.w))

    def p_max(self) -> float:
        return float(np.max(np.abs(self.p))) if len(self) else 0.0

    def particles(self):
        for i in range(len(self)):
            yield self.x[i], float(self.t[i]), self.p[i], float(self.w[i])

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        d = self.d
        xs = ["x"] if d == 1 else [f"x{i + 1}" for i in range(d)]
        ps = ["p"] if d == 1 else [f"p{i + 1}" for i in range(d)]
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(xs + ["t"] + ps + ["w"])
            for i in range(len(self)):
                wr.writerow([f"{v:.17g}" for v in self.x[i]] + [f"{self.t[i]:.17g}"]
                            + [f"{v:.17g}" for v in self.p[i]] + [f"{self.w[i]:.17g}"])
        return path


def _cell_id(cell: CellSolution) -> str:
    P = ",".join(f"{v:.17g}" for v in cell.P)
    return f"{cell.spec.name}:P=[{P}]:eps={cell.eps:.17g}:n={cell.grid.n_x}x{cell.grid.n_t}"


def build_measure(cell: CellSolution, theta: DensityField, prune: bool = False) -> GraphMeasure:
    """One particle per node with weight theta * cell volume and p = P + D phi.

    Pruning (off by default) drops particles lighter than 1e-16 max(w).
    """
    if theta.grid != cell.grid:
        raise ValueError("grid mismatch between cell and density")
    if not math.isclose(theta.eps, cell.eps, rel_tol=0, abs_tol=0):
        raise ValueError("density and cell have different eps")
    grid = cell.grid
    t, x = grid.mesh()
    d = grid.d
    w = node_weights(theta.values)
    xs = x.reshape(-1, d)
    ts = np.broadcast_to(t, grid.shape).ravel()
    ps = cell.momentum().reshape(-1, d)
    node = np.arange(w.size)
    if prune:
        keep = w > 1e-16 * w.max()
        xs, ts, ps, w, node = xs[keep], ts[keep], ps[keep], w[keep], node[keep]
    return GraphMeasure(xs, ts, ps, w, node, cell.eps, cell.P, _cell_id(cell), theta.source)


def expectation(mu: GraphMeasure, f: Callable) -> float:
    """sum_i w_i f(x_i, p_i, t_i) in node order. ``f`` is vectorized."""
    vals = np.broadcast_to(np.asarray(f(mu.x, mu.p, mu.t), dtype=float), mu.w.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("observable not finite on the support")
    return weighted_sum(mu.w, vals)


def project_check(mu: GraphMeasure, theta: DensityField, modes: Sequence[Mode] | None = None,
                  include_constant: bool = True) -> float:
    """max |E_mu[f] - int f dtheta| over (x, t)-functions."""
    grid = theta.grid
    t, x = grid.mesh()
    wt = node_weights(theta.values)
    fs = []
    if include_constant:
        fs.append((lambda xx, tt: np.ones_like(tt, dtype=float)))
    for md in (dictionary(grid.d) if modes is None else modes):
        fs.append(md.value)
    worst = 0.0
    for f in fs:
        a = expectation(mu, lambda xx, pp, tt: f(xx, tt))
        b = weighted_sum(wt, np.broadcast_to(f(x, t), grid.shape))
        worst = max(worst, abs(a - b))
    return worst


# ---------------------------------------------------------------------------
# dissipation


@dataclass(frozen=True)
class DissipationMatrix:
    weights: np.ndarray     # (N, d, d), per-particle masses of m_kj
    total_mass: np.ndarray  # (d, d)
    viscosity: tuple[float, ...]

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.total_mass)))

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.weights, np.swapaxes(self.weights, 1, 2))
                    and np.array_equal(self.total_mass, self.total_mass.T))

    def to_json(self) -> str:
        return json.dumps({"total_mass": self.total_mass.tolist(),
                           "viscosity": list(self.viscosity)}, sort_keys=True)


def _gram(hess: np.ndarray, kappa: Sequence[float]) -> np.ndarray:
    """sum_i kappa_i h_ik h_ij, assembled so that [k, j] and [j, k] are equal bitwise."""
    d = hess.shape[-1]
    out = np.zeros(hess.shape)
    for k in range(d):
        for j in range(k, d):
            acc = np.zeros(hess.shape[:-2])
            for i in range(d):
                acc = acc + kappa[i] * (hess[..., i, k] * hess[..., i, j])
            out[..., k, j] = acc
            out[..., j, k] = acc
    return out


def dissipation_matrix(cell: CellSolution, mu: GraphMeasure) -> DissipationMatrix:
    """Per-particle eps * (D^2 phi)^T (D^2 phi) * w and its total.

    The diffusion coefficient per axis is the solver's kappa, which equals eps
    unless the monotone scheme had to add numerical viscosity.
    """
    d = cell.grid.d
    hess = cell.hessian_array().reshape(-1, d, d)[mu.node]
    g = _gram(hess, cell.kappa)
    weights = g * mu.w[:, None, None]
    total = np.zeros((d, d))
    for k in range(d):
        for j in range(k, d):
            total[k, j] = total[j, k] = float(np.sum(weights[:, k, j]))
    return DissipationMatrix(weights, total, tuple(cell.kappa))


# ---------------------------------------------------------------------------
# compactly supported observables


def _bump1(s: np.ndarray) -> np.ndarray:
    s = np.abs(s)
    out = np.zeros_like(s, dtype=float)
    out[s <= 1.0] = 1.0
    mid = (s > 1.0) & (s < 2.0)
    u = s[mid] - 1.0
    a = np.exp(-1.0 / (1.0 - u))
    b = np.exp(-1.0 / u)
    out[mid] = a / (a + b)
    return out


def bump(p: np.ndarray, radius: float) -> np.ndarray:
    """Smooth cutoff: 1 on the box [-radius, radius]^d, 0 outside twice the box."""
    p = np.asarray(p, dtype=float)
    return np.prod(_bump1(p / radius), axis=-1)


def support_radius(p_sup: float) -> float:
    return float(math.ceil(p_sup) + 1)


@dataclass(frozen=True)
class Observable:
    """psi(x, t) * q(p) * bump(p); psi is a Fourier mode or 1, q is 1, p_k or p_k p_j."""

    mode: Mode | None
    q: tuple[int, ...]
    radius: float

    @property
    def name(self) -> str:
        base = self.mode.name if self.mode else "1"
        qn = "".join(f"*p{i + 1}" for i in self.q)
        return base + qn

    @property
    def p_free(self) -> bool:
        return len(self.q) == 0

    def _q(self, p):
        d = p.shape[-1]
        lead = p.shape[:-1]
        if not self.q:
            return np.ones(lead), np.zeros(lead + (d,)), np.zeros(lead + (d, d))
        if len(self.q) == 1:
            (k,) = self.q
            dq = np.zeros(lead + (d,))
            dq[..., k] = 1.0
            return p[..., k], dq, np.zeros(lead + (d, d))
        k, j = self.q
        dq = np.zeros(lead + (d,))
        dq[..., k] += p[..., j]
        dq[..., j] += p[..., k]
        ddq = np.zeros(lead + (d, d))
        ddq[..., k, j] += 1.0
        ddq[..., j, k] += 1.0
        return p[..., k] * p[..., j], dq, ddq

    def value(self, x, p, t):
        psi = self.mode.value(x, t) if self.mode else np.ones(np.shape(t))
        return psi * self._q(p)[0] * bump(p, self.radius)

    def check_support(self, p: np.ndarray) -> None:
        if np.any(np.abs(p) > self.radius):
            raise SupportLeak(f"momentum {np.max(np.abs(p)):.4g} outside the flat region "
                              f"of radius {self.radius:g}")


def observable_dictionary(d: int, radius: float, modes: Sequence[Mode] | None = None,
                          with_constant: bool = False) -> tuple[Observable, ...]:
    qs: list[tuple[int, ...]] = [()] + [(k,) for k in range(d)]
    qs += [(k, j) for k in range(d) for j in range(k, d)]
    base: list[Mode | None] = list(dictionary(d) if modes is None else modes)
    if with_constant:
        base = [None] + base
    out = []
    for md in base:
        for q in qs:
            if md is None and not q:
                continue
            out.append(Observable(md, q, float(radius)))
    return tuple(out)


def generator_terms(obs: Observable, x, p, t, U, Hx, hess, kappa, derivs=None,
                    gram=None) -> dict[str, np.ndarray]:
    """Pointwise integrand pieces of the weak invariance identity on the flat region.

    Returns arrays for ``transport`` (phi_t + {H, phi}), ``viscous``
    (kappa_i phi_{x_i x_i}), ``mixed`` (2 kappa_i phi^eps_{x_i x_j} phi_{x_i p_j})
    and ``dissipation`` (kappa_i phi^eps_{x_i x_k} phi^eps_{x_i x_j} phi_{p_k p_j}).
    For p-independent observables ``total`` is the test-function generator
    itself, evaluated by the same routine as the density-side residual.
    ``derivs`` (the mode's value, t-derivative, gradient and second
    derivatives at the particles) and ``gram`` may be passed in when many
    observables share them.
    """
    obs.check_support(p)
    d = p.shape[-1]
    if obs.mode is None:
        zero = np.zeros(np.shape(t))
        f, ft, grad, dxx = np.ones(np.shape(t)), zero, np.zeros(np.shape(t) + (d,)), np.zeros(np.shape(t) + (d,))
    else:
        f, ft, grad, dxx = obs.mode.derivatives(x, t) if derivs is None else derivs
    if obs.p_free:
        total = mode_generator(obs.mode, x, t, U, kappa)
        z = np.zeros_like(total)
        return {"transport": ft + np.sum(U * grad, axis=-1),
                "viscous": sum(k * dxx[..., i] for i, k in enumerate(kappa)),
                "mixed": z, "dissipation": z, "total": total}
    q, dq, ddq = obs._q(p)
    transport = q * (ft + np.sum(U * grad, axis=-1)) - f * np.sum(Hx * dq, axis=-1)
    viscous = q * sum(k * dxx[..., i] for i, k in enumerate(kappa))
    mixed = np.zeros_like(q)
    for i in range(d):
        for j in range(d):
            mixed = mixed + 2.0 * kappa[i] * hess[..., i, j] * grad[..., i] * dq[..., j]
    if gram is None:
        gram = _gram(hess, kappa)
    dissipation = f * np.sum(gram * ddq, axis=(-2, -1))
    return {"transport": transport, "viscous": viscous, "mixed": mixed,
            "dissipation": dissipation, "total": transport + viscous + mixed + dissipation}


def measure_fields(cell: CellSolution, mu: GraphMeasure):
    """U, D_x H and the Hessian of phi at the particles."""
    d = cell.grid.d
    U = cell.drift.stack().reshape(-1, d)[mu.node]
    Hx = eval_bundle(cell.spec, mu.x, mu.p, mu.t).Hx
    hess = cell.hessian_array().reshape(-1, d, d)[mu.node]
    return U, Hx, hess

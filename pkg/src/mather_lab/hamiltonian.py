"""Catalog of smooth space-time periodic Hamiltonians.

Each entry is hand-differentiated; ``eval_bundle`` returns the value together
with D_x H, D_p H, D^2_pp H, the mixed block D_p D_x H and D^2_xx H. Inputs
use a trailing axis of length d for x and p, and t broadcasts against the
leading shape.

The smoothed entries replace |u| by sqrt(u^2 + delta^2) so that every
derivative exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "HamiltonianSpec",
    "Bundle",
    "GrowthReport",
    "LegendreBoxError",
    "CATALOG",
    "make_spec",
    "eval_bundle",
    "growth_report",
    "legendre",
    "drift_bound",
]

TWO_PI = 2.0 * np.pi


class Bundle(NamedTuple):
    H: np.ndarray
    Hx: np.ndarray    # (..., d)
    Hp: np.ndarray    # (..., d)
    Hpp: np.ndarray   # (..., d, d)
    Hpx: np.ndarray   # (..., d, d); [i, j] = d/dp_i d/dx_j
    Hxx: np.ndarray   # (..., d, d)


@dataclass(frozen=True)
class HamiltonianSpec:
    name: str
    d: int
    convex: bool
    delta: float = 0.1
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in CATALOG:
            raise KeyError(f"unknown Hamiltonian {self.name!r}; known: {sorted(CATALOG)}")
        entry = CATALOG[self.name]
        if entry.dims and self.d not in entry.dims:
            raise ValueError(f"{self.name} is defined for d in {entry.dims}, got {self.d}")
        if entry.smoothed and not self.delta > 0:
            raise ValueError("delta must be positive for smoothed Hamiltonians")
        unknown = set(self.parameters) - set(entry.defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        merged = dict(entry.defaults)
        merged.update({k: float(v) for k, v in self.parameters.items()})
        object.__setattr__(self, "parameters", MappingProxyType(merged))

    def __hash__(self) -> int:
        return hash((self.name, self.d, self.convex, self.delta, tuple(sorted(self.parameters.items()))))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HamiltonianSpec):
            return NotImplemented
        return (self.name, self.d, self.convex, self.delta, dict(self.parameters)) == (
            other.name, other.d, other.convex, other.delta, dict(other.parameters))

    def bundle(self, x, p, t) -> Bundle:
        return eval_bundle(self, x, p, t)

    def H(self, x, p, t) -> np.ndarray:
        return eval_bundle(self, x, p, t).H

    def describe(self) -> dict:
        return {"name": self.name, "d": self.d, "convex": self.convex, "delta": self.delta,
                "parameters": dict(sorted(self.parameters.items()))}


# ---------------------------------------------------------------------------
# catalog


def _zeros(lead, d):
    return (np.zeros(lead + (d,)), np.zeros(lead + (d, d)))


def _free(x, p, t, q, delta):
    lead = p.shape[:-1]
    d = p.shape[-1]
    vec0, mat0 = _zeros(lead, d)
    Hpp = np.broadcast_to(np.eye(d), lead + (d, d)).copy()
    return Bundle(0.5 * np.sum(p * p, axis=-1), vec0, p.copy(), Hpp, mat0, mat0.copy())


def _zero(x, p, t, q, delta):
    lead = p.shape[:-1]
    d = p.shape[-1]
    vec0, mat0 = _zeros(lead, d)
    return Bundle(np.zeros(lead), vec0, vec0.copy(), mat0, mat0.copy(), mat0.copy())


def _time_linear(x, p, t, q, delta):
    lead = p.shape[:-1]
    c = q["c_mean"] + q["c_amp"] * np.sin(TWO_PI * t)
    v = q["v_amp"] * np.cos(TWO_PI * t) ** 2
    c = np.broadcast_to(c, lead)
    vec0, mat0 = _zeros(lead, 1)
    H = c * p[..., 0] + v
    return Bundle(H, vec0, c[..., None].copy(), mat0, mat0.copy(), mat0.copy())


def _pendulum_like(x, p, t, amp):
    lead = p.shape[:-1]
    xx = x[..., 0]
    Hpx = np.zeros(lead + (1, 1))
    H = 0.5 * p[..., 0] ** 2 + amp * np.cos(TWO_PI * xx)
    Hx = (-TWO_PI * amp * np.sin(TWO_PI * xx))[..., None]
    Hxx = (-(TWO_PI ** 2) * amp * np.cos(TWO_PI * xx))[..., None, None]
    return Bundle(H, Hx, p.copy(), np.ones(lead + (1, 1)), Hpx, Hxx)


def _pendulum(x, p, t, q, delta):
    lead = p.shape[:-1]
    return _pendulum_like(x, p, t, np.broadcast_to(q["amplitude"], lead))


def _forced_pendulum(x, p, t, q, delta):
    lead = p.shape[:-1]
    amp = q["amplitude"] * (1.0 + q["forcing"] * np.cos(TWO_PI * t))
    return _pendulum_like(x, p, t, np.broadcast_to(amp, lead))


def _double_well(x, p, t, q, delta):
    lead = p.shape[:-1]
    a = q["amplitude"]
    xx = x[..., 0]
    pp = p[..., 0]
    H = (pp * pp - 1.0) ** 2 - a * np.cos(TWO_PI * xx)
    Hp = (4.0 * pp * (pp * pp - 1.0))[..., None]
    Hpp = (12.0 * pp * pp - 4.0)[..., None, None]
    Hx = (TWO_PI * a * np.sin(TWO_PI * xx))[..., None]
    Hxx = ((TWO_PI ** 2) * a * np.cos(TWO_PI * xx))[..., None, None]
    return Bundle(H, np.broadcast_to(Hx, lead + (1,)).copy(), Hp, Hpp,
                  np.zeros(lead + (1, 1)), np.broadcast_to(Hxx, lead + (1, 1)).copy())


def _smoothed_example(x, p, t, q, delta):
    """sqrt(p1^2+delta^2) - sqrt(p2^2+delta^2) + V(x, t)."""
    lead = p.shape[:-1]
    a, b = q["amplitude"], q["forcing"]
    p1, p2 = p[..., 0], p[..., 1]
    s1 = np.sqrt(p1 * p1 + delta * delta)
    s2 = np.sqrt(p2 * p2 + delta * delta)
    m = np.broadcast_to(a * (1.0 + b * np.cos(TWO_PI * t)), lead)
    c1, c2 = np.cos(TWO_PI * x[..., 0]), np.cos(TWO_PI * x[..., 1])
    n1, n2 = np.sin(TWO_PI * x[..., 0]), np.sin(TWO_PI * x[..., 1])
    V = m * c1 * c2
    H = s1 - s2 + V
    Hp = np.stack([p1 / s1, -p2 / s2], axis=-1)
    Hpp = np.zeros(lead + (2, 2))
    Hpp[..., 0, 0] = delta * delta / s1 ** 3
    Hpp[..., 1, 1] = -delta * delta / s2 ** 3
    Hx = np.stack([-TWO_PI * m * n1 * c2, -TWO_PI * m * c1 * n2], axis=-1)
    k2 = TWO_PI ** 2
    Hxx = np.empty(lead + (2, 2))
    Hxx[..., 0, 0] = -k2 * m * c1 * c2
    Hxx[..., 1, 1] = -k2 * m * c1 * c2
    Hxx[..., 0, 1] = k2 * m * n1 * n2
    Hxx[..., 1, 0] = Hxx[..., 0, 1]
    return Bundle(H, Hx, Hp, Hpp, np.zeros(lead + (2, 2)), Hxx)


@dataclass(frozen=True)
class _Entry:
    func: Callable
    convex: bool
    dims: tuple[int, ...]
    defaults: Mapping[str, float]
    smoothed: bool = False
    doc: str = ""


CATALOG: dict[str, _Entry] = {
    "free": _Entry(_free, True, (1, 2), {}, doc="1/2 |p|^2"),
    "zero": _Entry(_zero, True, (1, 2), {}, doc="H = 0"),
    "time_linear": _Entry(_time_linear, False, (1,),
                          {"c_mean": 0.0, "c_amp": 1.0, "v_amp": 1.0},
                          doc="(c_mean + c_amp sin 2pi t) p + v_amp cos^2 2pi t"),
    "pendulum": _Entry(_pendulum, True, (1,), {"amplitude": 1.0},
                       doc="1/2 p^2 + a cos 2pi x"),
    "forced_pendulum": _Entry(_forced_pendulum, True, (1,), {"amplitude": 1.0, "forcing": 0.5},
                              doc="1/2 p^2 + a cos 2pi x (1 + b cos 2pi t)"),
    "double_well": _Entry(_double_well, False, (1,), {"amplitude": 1.0},
                          doc="(p^2 - 1)^2 - a cos 2pi x"),
    "smoothed_example": _Entry(_smoothed_example, False, (2,),
                               {"amplitude": 1.0, "forcing": 0.5}, smoothed=True,
                               doc="|p1|_delta - |p2|_delta + a cos 2pi x1 cos 2pi x2 (1 + b cos 2pi t)"),
}


def make_spec(name: str, d: int | None = None, delta: float = 0.1, **parameters) -> HamiltonianSpec:
    """Catalog lookup with the catalog's convexity flag and default dimension."""
    if name not in CATALOG:
        raise KeyError(f"unknown Hamiltonian {name!r}; known: {sorted(CATALOG)}")
    entry = CATALOG[name]
    if d is None:
        d = entry.dims[0]
    return HamiltonianSpec(name, d, entry.convex, delta, parameters)


def _prepare(spec: HamiltonianSpec, x, p, t):
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if spec.d == 1 and p.ndim == 0:
        p = p[None]
    if spec.d == 1 and x.ndim == 0:
        x = x[None]
    if p.shape[-1] != spec.d:
        raise ValueError(f"momentum has dimension {p.shape[-1]}, spec {spec.name} expects {spec.d}")
    if x.shape[-1] != spec.d:
        raise ValueError(f"position has dimension {x.shape[-1]}, spec {spec.name} expects {spec.d}")
    t = np.asarray(t, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], p.shape[:-1], t.shape)
    x = np.mod(np.broadcast_to(x, lead + (spec.d,)), 1.0)
    p = np.broadcast_to(p, lead + (spec.d,))
    t = np.mod(np.broadcast_to(t, lead), 1.0)
    return x, p, t


def eval_bundle(spec: HamiltonianSpec, x, p, t) -> Bundle:
    x, p, t = _prepare(spec, x, p, t)
    entry = CATALOG[spec.name]
    return entry.func(x, p, t, spec.parameters, spec.delta)


# ---------------------------------------------------------------------------
# growth hypothesis


@dataclass(frozen=True)
class GrowthReport:
    chi_name: str
    slope: float
    offset: float
    margin: float
    radius_max: float
    satisfied: bool
    violation_radius: float | None
    divergence_holds: bool
    shell_max: tuple[float, ...]

    def chi(self, u):
        return self.slope * np.asarray(u) + self.offset


def _xt_samples(d: int, n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    axes = [np.arange(n) / n] * (d + 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    t = mesh[0].ravel()
    x = np.stack([m.ravel() for m in mesh[1:]], axis=-1)
    return x, t


def _shell_directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2.0 * np.pi * np.arange(max(count, 4)) / max(count, 4)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def growth_report(spec: HamiltonianSpec, radii, samples_per_shell: int = 16,
                  fit_fraction: float = 0.5, chi: tuple[float, float] | None = None) -> GrowthReport:
    """Check |H(x,p,t)| <= chi(|p|) with an affine chi(u) = a u + C, a, C >= 0.

    Without ``chi``, (a, C) is fitted on the inner ``fit_fraction`` of the
    shells as the dominating line of least mean height over [0, r_fit]; the
    outer shells then test the fit. An affine chi always has a divergent
    integral of 1/chi, so that half of the hypothesis is recorded as a flag.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be nonempty and increasing")
    x, t = _xt_samples(spec.d)
    dirs = _shell_directions(spec.d, samples_per_shell)
    shell_max = []
    for r in radii:
        p = (r * dirs)[:, None, :]
        vals = np.abs(eval_bundle(spec, x[None], p, t[None]).H)
        shell_max.append(float(vals.max()))
    shell_max = np.array(shell_max)

    if chi is None:
        n_fit = max(1, int(np.ceil(fit_fraction * radii.size)))
        r_fit, m_fit = radii[:n_fit], shell_max[:n_fit]
        r_top = r_fit[-1]
        res = linprog(c=[0.5 * r_top, 1.0],
                      A_ub=np.stack([-r_fit, -np.ones_like(r_fit)], axis=1), b_ub=-m_fit,
                      bounds=[(0, None), (0, None)], method="highs")
        a, c = (float(v) for v in res.x)
        # guard the LP tolerance so the fitted shells are dominated exactly
        c += max(0.0, float(np.max(m_fit - (a * r_fit + c))))
        name = "affine(fit)"
    else:
        a, c = float(chi[0]), float(chi[1])
        name = "affine(given)"
    margins = a * radii + c - shell_max
    bad = np.nonzero(margins < 0)[0]
    return GrowthReport(
        chi_name=name, slope=a, offset=c, margin=float(margins.min()),
        radius_max=float(radii[-1]), satisfied=bool(margins.min() >= 0),
        violation_radius=float(radii[bad[0]]) if bad.size else None,
        divergence_holds=True, shell_max=tuple(float(v) for v in shell_max),
    )


def drift_bound(spec: HamiltonianSpec, radius: float, n_p: int = 21, n_xt: int = 8) -> np.ndarray:
    """Per-axis sup of |D_p H| over [-radius, radius]^d and a coarse (x, t) lattice."""
    x, t = _xt_samples(spec.d, n_xt)
    axis = np.linspace(-radius, radius, n_p)
    pm = np.stack([m.ravel() for m in np.meshgrid(*([axis] * spec.d), indexing="ij")], axis=-1)
    Hp = eval_bundle(spec, x[None], pm[:, None, :], t[None]).Hp
    return np.abs(Hp).reshape(-1, spec.d).max(axis=0)


# ---------------------------------------------------------------------------
# Legendre transform (convex entries only)


class LegendreBoxError(ValueError):
    """The discrete maximizer sits on the search box boundary."""


def legendre_argmax(spec: HamiltonianSpec, x, v, t, p_box=(-10.0, 10.0), n_p: int = 401):
    """Return ``(L, p_star)`` for L(x, v, t) = max_p p.v - H(x, p, t)."""
    if not spec.convex:
        raise ValueError(f"{spec.name} is not convex; the Legendre transform is not used for it")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (spec.d,):
        raise ValueError("velocity dimension mismatch")
    lo, hi = float(p_box[0]), float(p_box[1])
    axis = np.linspace(lo, hi, n_p)
    step = axis[1] - axis[0]
    mesh = np.meshgrid(*([axis] * spec.d), indexing="ij")
    pm = np.stack(mesh, axis=-1)
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def objective(p):
        return p @ v - eval_bundle(spec, x, p, t).H

    vals = objective(pm)
    idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    if any(i == 0 or i == n_p - 1 for i in idx):
        raise LegendreBoxError(f"maximizer at box boundary {pm[idx]}; enlarge p_box")
    # one local quadratic fit per axis around the discrete argmax
    p_star = pm[idx].copy()
    for ax in range(spec.d):
        sl = list(idx)
        f = []
        for off in (-1, 0, 1):
            sl[ax] = idx[ax] + off
            f.append(vals[tuple(sl)])
        denom = f[0] - 2.0 * f[1] + f[2]
        if denom < 0:
            p_star[ax] += 0.5 * step * (f[0] - f[2]) / denom
    best = float(objective(p_star))
    return max(best, float(vals[idx])), p_star


def legendre(spec: HamiltonianSpec, x, v, t, p_box=(-10.0, 10.0), n_p: int = 401) -> float:
    return legendre_argmax(spec, x, v, t, p_box, n_p)[0]

"""Periodic grid calculus on the unit space-time torus T^{d+1}.

Every field is sampled on a uniform grid with unit period along each axis.
Arrays are stored row-major with time outermost, i.e. with shape
``(n_t, n_x)`` for d = 1 and ``(n_t, n_x, n_x)`` for d = 2, so a time slice
is a contiguous block.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "PeriodicGrid",
    "ScalarField",
    "VectorField",
    "differentiate",
    "integrate",
    "interpolate",
    "gradient_energy",
    "dump_field",
    "load_field",
]

_KINDS = ("grad_x", "d_t", "laplacian_x", "hessian_xx")
_SCHEMES = ("central2", "spectral", "forward")


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on T^{d+1} with ``n_x`` points per spatial axis."""

    d: int
    n_x: int
    n_t: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.d}")
        if self.n_x < 8 or self.n_t < 8:
            raise ValueError(f"grid needs n_x >= 8 and n_t >= 8, got n_x={self.n_x}, n_t={self.n_t}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_t,) + (self.n_x,) * self.d

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.d

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        return 1.0 / self.n_x

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    def t_nodes(self) -> np.ndarray:
        return np.arange(self.n_t) / self.n_t

    def x_nodes(self) -> np.ndarray:
        return np.arange(self.n_x) / self.n_x

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(t, x)`` with ``t.shape == shape`` and ``x.shape == shape + (d,)``."""
        axes = [self.t_nodes()] + [self.x_nodes()] * self.d
        grids = np.meshgrid(*axes, indexing="ij")
        return grids[0], np.stack(grids[1:], axis=-1)

    def sample(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        """Sample ``func(x, t)`` (x with trailing axis d) on the grid."""
        t, x = self.mesh()
        return ScalarField(self, np.broadcast_to(func(x, t), self.shape))

    def to_json(self) -> dict:
        return {"d": self.d, "n_t": self.n_t, "n_x": self.n_x}


@dataclass(frozen=True)
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class VectorField:
    grid: PeriodicGrid
    components: tuple[ScalarField, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.d:
            raise ValueError(f"expected {self.grid.d} components, got {len(self.components)}")
        if any(c.grid != self.grid for c in self.components):
            raise ValueError("all components must share the grid")

    @classmethod
    def from_array(cls, grid: PeriodicGrid, arr: np.ndarray) -> "VectorField":
        """Build from an array with trailing axis of length d."""
        return cls(grid, tuple(ScalarField(grid, arr[..., i]) for i in range(grid.d)))

    def stack(self) -> np.ndarray:
        return np.stack([c.values for c in self.components], axis=-1)


# ---------------------------------------------------------------------------
# array-level stencils (axis 0 is time, axes 1..d are space)


def central_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) / (2.0 * h)


def second_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(a, -1, axis=axis) - 2.0 * a + np.roll(a, 1, axis=axis)) / (h * h)


def forward_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(a, -1, axis=axis) - a) / h


def backward_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (a - np.roll(a, 1, axis=axis)) / h


def _wavenumbers(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)


def _spectral(a: np.ndarray, orders: dict[int, int]) -> np.ndarray:
    """Apply prod_axis (i k)^order in Fourier space; odd orders drop the Nyquist mode."""
    spec = np.fft.fftn(a, axes=tuple(range(a.ndim)))
    for axis, order in orders.items():
        n = a.shape[axis]
        k = _wavenumbers(n)
        mult = (1j * k) ** order
        if order % 2 == 1 and n % 2 == 0:
            mult[n // 2] = 0.0
        shape = [1] * a.ndim
        shape[axis] = n
        spec = spec * mult.reshape(shape)
    return np.real(np.fft.ifftn(spec, axes=tuple(range(a.ndim))))


def differentiate(f: ScalarField, kind: str, scheme: str = "central2"):
    """Periodic derivative of a scalar field.

    ``grad_x`` returns a VectorField, ``d_t`` and ``laplacian_x`` a ScalarField,
    and ``hessian_xx`` a d x d tuple of ScalarFields whose (i, j) and (j, i)
    entries are the same object. The ``forward`` scheme (first-order forward
    difference) is only meaningful for ``d_t``; it is the time difference used
    by the implicit cell solver.
    """
    if kind not in _KINDS:
        raise ValueError(f"unsupported derivative kind {kind!r}")
    if scheme not in _SCHEMES:
        raise ValueError(f"unsupported scheme {scheme!r}")
    if scheme == "forward" and kind != "d_t":
        raise ValueError("forward differences are only available for d_t")
    a = f.values
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite field values")
    g = f.grid
    h = g.h
    spatial = range(1, g.d + 1)

    if kind == "d_t":
        if scheme == "central2":
            out = central_diff(a, 0, g.dt)
        elif scheme == "forward":
            out = forward_diff(a, 0, g.dt)
        else:
            out = _spectral(a, {0: 1})
        return ScalarField(g, out)

    if kind == "grad_x":
        if scheme == "central2":
            comps = [central_diff(a, ax, h) for ax in spatial]
        else:
            comps = [_spectral(a, {ax: 1}) for ax in spatial]
        return VectorField(g, tuple(ScalarField(g, c) for c in comps))

    if kind == "laplacian_x":
        if scheme == "central2":
            out = sum(second_diff(a, ax, h) for ax in spatial)
        else:
            out = sum(_spectral(a, {ax: 2}) for ax in spatial)
        return ScalarField(g, out)

    # hessian_xx
    rows: list[list[ScalarField | None]] = [[None] * g.d for _ in range(g.d)]
    for i in range(g.d):
        for j in range(i, g.d):
            ai, aj = i + 1, j + 1
            if scheme == "central2":
                if i == j:
                    m = second_diff(a, ai, h)
                else:
                    m = 0.5 * (central_diff(central_diff(a, ai, h), aj, h)
                               + central_diff(central_diff(a, aj, h), ai, h))
            else:
                m = _spectral(a, {ai: 2}) if i == j else _spectral(a, {ai: 1, aj: 1})
            sf = ScalarField(g, m)
            rows[i][j] = sf
            rows[j][i] = sf
    return tuple(tuple(r) for r in rows)


def gradient_energy(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Discrete |D f|^2 matching the compact Laplacian.

    Uses the mean of the squared one-sided differences per axis, which is the
    exact defect of the product rule for the 3-point Laplacian:
    ``lap(f^2) - 2 f lap(f) = 2 * gradient_energy(f)``.
    """
    h = grid.h
    out = np.zeros_like(values, dtype=float)
    for ax in range(1, grid.d + 1):
        out += 0.5 * (forward_diff(values, ax, h) ** 2 + backward_diff(values, ax, h) ** 2)
    return out


def integrate(f: ScalarField | np.ndarray) -> float:
    """Integral over T^{d+1} (volume 1): the nodal mean."""
    a = f.values if isinstance(f, ScalarField) else np.asarray(f)
    return float(np.sum(a) / a.size)


def _snap(s: np.ndarray) -> np.ndarray:
    r = np.round(s)
    return np.where(np.abs(s - r) < 1e-9, r, s)


def interpolate(f: ScalarField | np.ndarray, x, t, grid: PeriodicGrid | None = None) -> np.ndarray:
    """Periodic multilinear interpolation at points ``(x, t)``.

    ``x`` has a trailing axis of length d (a scalar is accepted when d = 1);
    ``t`` broadcasts against the leading shape. Exact at grid nodes.
    """
    if isinstance(f, ScalarField):
        grid, a = f.grid, f.values
    else:
        if grid is None:
            raise ValueError("grid required for raw arrays")
        a = np.asarray(f)
    x = np.asarray(x, dtype=float)
    if grid.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    t = np.asarray(t, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], t.shape)
    x = np.broadcast_to(x, lead + (grid.d,))
    t = np.broadcast_to(t, lead)

    coords = [_snap(np.mod(t, 1.0) * grid.n_t)]
    sizes = [grid.n_t]
    for i in range(grid.d):
        coords.append(_snap(np.mod(x[..., i], 1.0) * grid.n_x))
        sizes.append(grid.n_x)
    lo, frac = [], []
    for c, n in zip(coords, sizes):
        i0 = np.floor(c)
        frac.append(c - i0)
        lo.append(i0.astype(np.int64) % n)

    out = np.zeros(lead, dtype=float)
    ndim = len(sizes)
    for corner in range(2 ** ndim):
        w = np.ones(lead, dtype=float)
        idx = []
        for ax in range(ndim):
            bit = (corner >> ax) & 1
            w = w * (frac[ax] if bit else 1.0 - frac[ax])
            idx.append((lo[ax] + bit) % sizes[ax])
        out = out + w * a[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# dump format: CSV ``t,x1[,x2],value`` plus a JSON sidecar with grid metadata


def dump_field(f: ScalarField, path: str | Path) -> Path:
    path = Path(path)
    g = f.grid
    t, x = g.mesh()
    header = ["t"] + [f"x{i + 1}" for i in range(g.d)] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        cols = [t.ravel()] + [x[..., i].ravel() for i in range(g.d)] + [f.values.ravel()]
        for row in zip(*cols):
            w.writerow([f"{v:.17g}" for v in row])
    path.with_suffix(".json").write_text(json.dumps(g.to_json(), sort_keys=True) + "\n")
    return path


def load_field(path: str | Path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = PeriodicGrid(int(meta["d"]), int(meta["n_x"]), int(meta["n_t"]))
    with path.open() as fh:
        rows = list(csv.reader(fh))
    vals = np.array([float(r[-1]) for r in rows[1:]])
    return ScalarField(grid, vals.reshape(grid.shape))


def stack_fields(fields: Sequence[ScalarField]) -> np.ndarray:
    return np.stack([f.values for f in fields], axis=-1)

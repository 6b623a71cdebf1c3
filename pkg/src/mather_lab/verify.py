"""Checks of the Mather conditions, the derivative identities and bounds,
the weak invariance identity and the trends in eps.

Every check produces :class:`ReportRow` objects. A row compares ``lhs`` and
``rhs``; ``abs_residual = |lhs - rhs|`` and ``rel_residual`` divides it by
``scale`` (the larger of |lhs|, |rhs| and a per-row floor, or an explicit
magnitude of the terms involved). ``metric`` says which residual is held to
``tolerance``. Informational rows carry an infinite tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .cell_solver import CellSolution, PDerivatives, SolverConfig, p_derivative_fields
from .fokker_planck import (
    DensityField,
    Mode,
    dictionary,
    node_weights,
    stationarity_residual,
    weighted_sum,
)
from .hamiltonian import eval_bundle
from .measures import (
    DissipationMatrix,
    GraphMeasure,
    Observable,
    _gram,
    expectation,
    generator_terms,
    measure_fields,
)
from .torus_field import backward_diff, central_diff, forward_diff, gradient_energy

__all__ = [
    "ReportRow",
    "VerificationReport",
    "SweepEntry",
    "check_mather_conditions",
    "check_estimates",
    "check_uniform_bounds",
    "check_adjoint_identity",
    "check_density",
    "check_dissipation",
    "vanishing_viscosity_report",
    "loglog_slope",
    "known_inviscid_hbar",
]

INF = float("inf")


@dataclass(frozen=True)
class ReportRow:
    check: str
    name: str
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    scale: float
    tolerance: float
    metric: str
    passed: bool
    context: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("lhs", "rhs", "abs_residual", "rel_residual", "scale", "tolerance"):
            out[k] = _num(out[k])
        return out


def _num(v: float):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return v


def row(check: str, name: str, lhs: float, rhs: float, tolerance: float = INF,
        metric: str = "relative", floor: float = 0.0, scale: float | None = None,
        atol: float = 0.0, **context) -> ReportRow:
    """One comparison; ``atol`` is an absolute noise allowance that also passes the row."""
    lhs, rhs = float(lhs), float(rhs)
    ab = abs(lhs - rhs)
    sc = max(abs(lhs), abs(rhs), floor) if scale is None else max(float(scale), floor)
    rel = ab / sc if sc > 0 else (0.0 if ab == 0 else INF)
    res = rel if metric == "relative" else ab
    if not (math.isfinite(ab) and math.isfinite(rel)):
        raise FloatingPointError(f"non-finite residual in {check}/{name}")
    return ReportRow(check, name, lhs, rhs, ab, rel, sc, float(tolerance), metric,
                     bool(res <= tolerance or ab <= atol), dict(sorted(context.items())))


def bound_row(check: str, name: str, lhs: float, bound: float, slack: float = 0.05,
              atol: float = 1e-12, **context) -> ReportRow:
    """Inequality lhs <= bound * (1 + slack), or excess below the rounding level ``atol``."""
    lhs, bound = float(lhs), float(bound)
    excess = max(lhs - bound, 0.0)
    sc = abs(bound) if bound != 0 else 1.0
    rel = excess / sc
    return ReportRow(check, name, lhs, bound, excess, rel, sc, slack, "relative",
                     bool(rel <= slack or excess <= atol), dict(sorted(context.items())))


def info_row(check: str, name: str, value: float, reference: float = 0.0, **context) -> ReportRow:
    return row(check, name, value, reference, INF, "absolute", **context)


@dataclass
class VerificationReport:
    rows: list[ReportRow] = field(default_factory=list)
    context: dict = field(default_factory=dict)

    def add(self, r: ReportRow | Iterable[ReportRow]) -> None:
        if isinstance(r, ReportRow):
            self.rows.append(r)
        else:
            self.rows.extend(r)

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.rows.extend(other.rows)
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if not r.passed]

    def get(self, check: str, name: str | None = None) -> list[ReportRow]:
        return [r for r in self.rows if r.check == check and (name is None or r.name == name)]

    def one(self, check: str, name: str) -> ReportRow:
        found = self.get(check, name)
        if len(found) != 1:
            raise KeyError(f"{check}/{name}: {len(found)} rows")
        return found[0]

    def to_json(self) -> str:
        payload = {"context": self.context, "passed": self.passed,
                   "rows": [r.to_dict() for r in self.rows]}
        return json.dumps(payload, sort_keys=True, indent=1)

    def to_text(self) -> str:
        head = ("check", "name", "lhs", "rhs", "residual", "tol", "ok")
        body = []
        for r in self.rows:
            res = r.rel_residual if r.metric == "relative" else r.abs_residual
            body.append((r.check, r.name, f"{r.lhs:.6e}", f"{r.rhs:.6e}", f"{res:.3e}",
                         "info" if math.isinf(r.tolerance) else f"{r.tolerance:.1e}",
                         "PASS" if r.passed else "FAIL"))
        widths = [max(len(x[i]) for x in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [head] + body]
        return "\n".join(lines) + "\n"


def _ctx(cell: CellSolution) -> dict:
    return {"spec": cell.spec.name, "P": [float(v) for v in cell.P], "eps": cell.eps,
            "grid": f"{cell.grid.d}d:{cell.grid.n_x}x{cell.grid.n_t}",
            "scheme": "lax_friedrichs", "kappa": [float(k) for k in cell.kappa]}


# ---------------------------------------------------------------------------
# (a) - (c)


def _visc_lap(cell: CellSolution) -> np.ndarray:
    return sum(k * cell.hess_phi[i][i].values for i, k in enumerate(cell.kappa))


def check_mather_conditions(cell: CellSolution, theta: DensityField, mu: GraphMeasure,
                            modes: Sequence[Mode] | None = None, tol_a: float = 1e-6,
                            tol_c: float = 1e-3, tol_b: float = 1e-10) -> VerificationReport:
    ctx = _ctx(cell)
    rep = VerificationReport(context=ctx)
    d = cell.grid.d
    node = mu.node
    phi_t = cell.phi_t.values.ravel()[node]
    phi = cell.phi.values.ravel()[node]
    grad = cell.grad_phi.stack().reshape(-1, d)[node]
    U = cell.drift.stack().reshape(-1, d)[node]
    lap_k = _visc_lap(cell).ravel()[node]
    b = eval_bundle(cell.spec, mu.x, mu.p, mu.t)
    hb = cell.hbar

    def E(vals):
        return weighted_sum(mu.w, vals)

    # (a): the PDE gives phi_t + H - Hbar = -kappa lap(phi) at every node
    dev = phi_t + b.H - hb
    lhs = E(dev ** 2)
    rhs = E(lap_k ** 2)
    rep.add(row("mather_a", "identity", lhs, rhs, tol_a, floor=1e-14, **ctx))
    rep.add(info_row("mather_a", "rms", math.sqrt(max(lhs, 0.0)), 0.0, **ctx))
    rep.add(info_row("mather_a", "rms_from_laplacian", math.sqrt(max(rhs, 0.0)), 0.0, **ctx))
    rep.add(info_row("mather_a", "literal_mean", E(phi_t + b.H), hb, **ctx))
    rep.add(info_row("mather_a", "phi_t_free_mean", E(b.H), hb, **ctx))

    # (b)
    rel_flux = E(phi_t + np.sum(grad * U, axis=-1))
    rep.add(row("mather_b", "psi_test_ito", rel_flux, -E(lap_k), tol_b, metric="absolute",
                **ctx))
    rep.add(info_row("mather_b", "b_relative", rel_flux, 0.0, **ctx))
    rep.add(info_row("mather_b", "b_full", E(phi_t + np.sum(mu.p * U, axis=-1)), 0.0, **ctx))
    rep.add(info_row("mather_b", "b_literal",
                     E(phi_t + np.sum((mu.p + cell.P) * U, axis=-1)), 0.0, **ctx))
    lit = rel_flux + cell.eps * E(cell.laplacian.values.ravel()[node] + np.sum(grad ** 2, axis=-1))
    rep.add(info_row("mather_b", "psi_test_literal", lit, 0.0, **ctx))
    rep.add(info_row("mather_b", "mean_phi", E(phi), 0.0, **ctx))

    # (c)
    c_disc = stationarity_residual(theta, cell.drift, cell.eps, "discrete", modes)
    c_an = stationarity_residual(theta, cell.drift, cell.eps, "analytic", modes)
    rep.add(row("mather_c", "stationarity_discrete", c_disc, 0.0, tol_c, metric="absolute", **ctx))
    rep.add(info_row("mather_c", "stationarity_analytic", c_an, 0.0, **ctx))
    # graph support: momenta of the particles are P + D phi at their nodes
    rep.add(row("graph", "support", float(np.max(np.abs(mu.p - (cell.P + grad)))), 0.0, 0.0,
                metric="absolute", **ctx))
    return rep


def check_density(cell: CellSolution, theta: DensityField, mass_tol: float = 1e-12
                  ) -> VerificationReport:
    """Positivity and unit mass of every time slice of theta."""
    ctx = _ctx(cell)
    rep = VerificationReport(context=ctx)
    rep.add(bound_row("density", "min_theta", 0.0, float(np.min(theta.values)), 0.0, atol=0.0, **ctx))
    err = float(np.max(np.abs(theta.slice_mass() - 1.0)))
    rep.add(row("density", "slice_mass", err, 0.0, mass_tol, metric="absolute", **ctx))
    return rep


def check_dissipation(cell: CellSolution, dissipation: DissipationMatrix,
                      eig_tol: float = 1e-10) -> VerificationReport:
    ctx = _ctx(cell)
    rep = VerificationReport(context=ctx)
    rep.add(row("dissipation", "symmetric", float(dissipation.is_symmetric()), 1.0, 0.0,
                metric="absolute", **ctx))
    lam = dissipation.min_eigenvalue()
    rep.add(bound_row("dissipation", "neg_min_eigenvalue", -lam, eig_tol, 0.0, atol=0.0, **ctx))
    rep.add(info_row("dissipation", "trace", float(np.trace(dissipation.total_mass)), **ctx))
    return rep


# ---------------------------------------------------------------------------
# derivative identities


def _energy(f: np.ndarray, cell: CellSolution) -> np.ndarray:
    """sum_i kappa_i |D_i f|^2 with the product-rule-consistent one-sided form."""
    grid = cell.grid
    kap = cell.kappa
    if all(k == kap[0] for k in kap):
        return kap[0] * gradient_energy(f, grid)
    out = np.zeros_like(f)
    for i, k in enumerate(kap):
        out += k * 0.5 * (forward_diff(f, i + 1, grid.h) ** 2 + backward_diff(f, i + 1, grid.h) ** 2)
    return out


def _cgrad(f: np.ndarray, cell: CellSolution) -> np.ndarray:
    return np.stack([central_diff(f, i + 1, cell.grid.h) for i in range(cell.grid.d)], axis=-1)


@dataclass
class _Beta:
    name: str
    f: np.ndarray          # phi_beta
    Df: np.ndarray         # D phi_beta (..., d)
    ff: np.ndarray         # phi_beta_beta
    H_b: np.ndarray        # H_beta
    H_bb: np.ndarray       # H_beta_beta
    DpH_b: np.ndarray      # D_p H_beta (..., d)
    hbar_b: float
    hbar_bb: float


def _beta_fields(cell: CellSolution, pder: PDerivatives | None):
    grid = cell.grid
    d = grid.d
    t, x = grid.mesh()
    b = eval_bundle(cell.spec, x, cell.momentum(), t)
    hess = cell.hessian_array()
    out = []
    for i in range(d):
        f = cell.grad_phi.components[i].values
        out.append(_Beta(f"x{i + 1}", f, hess[..., :, i], central_diff(f, i + 1, grid.h),
                         b.Hx[..., i], b.Hxx[..., i, i], b.Hpx[..., :, i], 0.0, 0.0))
    if pder is not None:
        for i in range(d):
            f = pder.dphi[i].values
            out.append(_Beta(f"P{i + 1}", f, _cgrad(f, cell), pder.d2phi[i].values,
                             b.Hp[..., i], b.Hpp[..., i, i], b.Hpp[..., :, i],
                             float(pder.dhbar[i]), float(pder.d2hbar[i])))
    return out, b


def _estimate_values(cell: CellSolution, theta: DensityField, pder: PDerivatives | None):
    w = node_weights(theta.values)
    betas, b = _beta_fields(cell, pder)
    vals = {}
    for be in betas:
        quad = np.einsum("...k,...kj,...j->...", be.Df, b.Hpp, be.Df)
        lin = 2.0 * np.sum(be.DpH_b * be.Df, axis=-1)
        R = be.hbar_bb - be.H_bb - lin - quad
        t1 = be.f * (be.H_b - be.hbar_b)
        e1 = weighted_sum(w, _energy(be.f, cell))
        r1 = weighted_sum(w, t1)
        l2 = weighted_sum(w, be.hbar_bb - be.H_bb)
        r2 = weighted_sum(w, lin + quad)
        e3 = weighted_sum(w, _energy(be.ff, cell))
        r3 = -weighted_sum(w, be.ff * R)
        vals[be.name] = {
            "1": (e1, r1, weighted_sum(w, np.abs(t1))),
            "2": (l2, r2, max(weighted_sum(w, np.abs(be.hbar_bb - be.H_bb)),
                              weighted_sum(w, np.abs(lin) + np.abs(quad)))),
            "3": (e3, r3, weighted_sum(w, np.abs(be.ff * R))),
        }
    return vals


def check_estimates(cell: CellSolution, theta: DensityField, beta_set: Sequence[str] | None = None,
                    p_fd_step: float = 1e-3, cfg: SolverConfig | None = None,
                    pder: PDerivatives | None = None, tol_x: float = 0.05, tol_P: float = 0.10,
                    tol_halving: float = 0.01) -> VerificationReport:
    """The three derivative identities along spatial and momentum directions.

    (1) eps int |D phi_b|^2 = int phi_b (H_b - Hbar_b)
    (2) int (Hbar_bb - H_bb) = int (2 D_pH_b . D phi_b + D_ppH D phi_b . D phi_b)
    (3) eps int |D phi_bb|^2 = -int phi_bb R,  R = Hbar_bb - H_bb - 2 D_pH_b . D phi_b - D_ppH D phi_b . D phi_b
    all integrals against theta, with relative residual |lhs - rhs| / max(|lhs|, |rhs|).
    For momentum directions the P-derivatives come from centered differences
    of full solves. Step-halving rows compare h and h/2; the identity
    defects there are scaled by the integral of the absolute integrand,
    since the defects themselves are near zero.
    """
    d = cell.grid.d
    wanted = set(beta_set) if beta_set is not None else {f"x{i + 1}" for i in range(d)} | {
        f"P{i + 1}" for i in range(d)}
    need_P = any(b.startswith("P") for b in wanted)
    ctx = _ctx(cell)
    rep = VerificationReport(context=ctx)
    if need_P and pder is None:
        pder = p_derivative_fields(cell.spec, cell.P, cell.eps, cell.grid, cfg, p_fd_step, center=cell)
    vals = _estimate_values(cell, theta, pder if need_P else None)
    # second differences in P amplify the solver's hbar accuracy by 1/h^2
    fd_noise = 1e-12 * (1.0 + abs(cell.hbar)) / pder.h ** 2 if need_P else 0.0
    for name in sorted(vals):
        if name not in wanted:
            continue
        tol = tol_x if name.startswith("x") else tol_P
        for ident in ("1", "2", "3"):
            lhs, rhs, mag = vals[name][ident]
            rep.add(row("estimates", f"({ident}) beta={name}", lhs, rhs, tol, floor=1e-12,
                        atol=fd_noise if name.startswith("P") else 0.0, beta=name,
                        h=pder.h if name.startswith("P") else 0.0,
                        integrand_magnitude=mag, **ctx))
    if need_P:
        half = p_derivative_fields(cell.spec, cell.P, cell.eps, cell.grid, cfg, pder.h / 2,
                                   center=pder.center)
        vals_h = _estimate_values(cell, theta, half)
        for i in range(d):
            rep.add(row("estimates", f"halving dHbar/dP{i + 1}", pder.dhbar[i], half.dhbar[i],
                        tol_halving, floor=1e-8, atol=4 * fd_noise, **ctx))
            rep.add(row("estimates", f"halving d2Hbar/dP{i + 1}^2", pder.d2hbar[i], half.d2hbar[i],
                        tol_halving, floor=1e-8, atol=4 * fd_noise, **ctx))
            name = f"P{i + 1}"
            for ident in ("1", "2", "3"):
                a = vals[name][ident]
                c = vals_h[name][ident]
                rep.add(row("estimates", f"halving ({ident}) beta={name}", a[0] - a[1], c[0] - c[1],
                            tol_halving, scale=max(a[2], c[2]), floor=1e-12, atol=4 * fd_noise,
                            **ctx))
    return rep


# ---------------------------------------------------------------------------
# bounds across the sweep


@dataclass
class SweepEntry:
    cell: CellSolution
    theta: DensityField
    mu: GraphMeasure | None = None
    pder: PDerivatives | None = None
    dissipation: DissipationMatrix | None = None
    adjoint: VerificationReport | None = None


def _graph_sups(cell: CellSolution):
    t, x = cell.grid.mesh()
    b = eval_bundle(cell.spec, x, cell.momentum(), t)
    d = cell.grid.d
    hxx = np.max(np.abs(b.Hxx[..., np.arange(d), np.arange(d)]))
    dphx = np.max(np.linalg.norm(b.Hpx, axis=-2))
    hpp = np.max(np.linalg.norm(b.Hpp, ord=2, axis=(-2, -1)))
    return b, float(np.max(np.linalg.norm(b.Hx, axis=-1))), float(hxx), float(dphx), float(hpp)


def check_uniform_bounds(entries: Sequence[SweepEntry], slack: float = 0.05,
                         band: float = 2.0, cfg: SolverConfig | None = None,
                         p_fd_step: float = 1e-3) -> VerificationReport:
    if len(entries) < 3:
        raise ValueError("need at least three eps values")
    rep = VerificationReport(context={"eps": [e.cell.eps for e in entries]})
    sups = []
    for e in entries:
        cell, theta = e.cell, e.theta
        ctx = _ctx(cell)
        w = node_weights(theta.values)
        d = cell.grid.d
        grad = cell.grad_phi.stack()
        sup_dphi = float(np.max(np.linalg.norm(grad, axis=-1)))
        sups.append(sup_dphi)
        b, sup_hx, sup_hxx, sup_dphx, sup_hpp = _graph_sups(cell)
        rep.add(info_row("bounds", "sup|Dphi|", sup_dphi, **ctx))
        rep.add(info_row("bounds", "sup|phi_t|", float(np.max(np.abs(cell.phi_t.values))), **ctx))
        # (d2phi)
        d2 = sum(weighted_sum(w, _energy(grad[..., i], cell)) for i in range(d))
        rep.add(bound_row("bounds", "d2phi", d2, sup_dphi * sup_hx, slack, **ctx))
        # (d2Px)
        pder = e.pder
        if pder is None:
            pder = p_derivative_fields(cell.spec, cell.P, cell.eps, cell.grid, cfg, p_fd_step,
                                       center=cell)
            e.pder = pder
        lhs = sum(weighted_sum(w, _energy(pder.dphi[i].values, cell)) for i in range(d))
        rhs = sum(weighted_sum(w, pder.dphi[i].values ** 2) for i in range(d))
        rhs += sum(weighted_sum(w, (b.Hp[..., i] - pder.dhbar[i]) ** 2) for i in range(d))
        rep.add(bound_row("bounds", "d2Px", lhs, rhs, slack, **ctx))
        # (dxphixx)
        C = sup_hxx + 2.0 * sup_dphx + sup_hpp
        hess = cell.hessian_array()
        frob = np.sqrt(np.sum(hess ** 2, axis=(-2, -1)))
        cube = weighted_sum(w, frob ** 3)
        for i in range(d):
            ff = central_diff(grad[..., i], i + 1, cell.grid.h)
            lhs = weighted_sum(w, _energy(ff, cell))
            rep.add(bound_row("bounds", f"dxphixx i={i + 1}", lhs, C * (1.0 + cube), slack,
                              constant=C, **ctx))
    # gradients at rounding level (phi = 0) count as equal
    ratio = (max(sups) + 1e-10) / (min(sups) + 1e-10)
    rep.add(bound_row("bounds", "lipschitz_band", ratio, band, 0.0, atol=0.0,
                      spec=entries[0].cell.spec.name, P=[float(v) for v in entries[0].cell.P]))
    return rep


# ---------------------------------------------------------------------------
# weak invariance identity


def check_adjoint_identity(cell: CellSolution, mu: GraphMeasure, dissipation: DissipationMatrix,
                           observables: Sequence[Observable], theta: DensityField | None = None
                           ) -> VerificationReport:
    """Residuals of the eps-level identity for compactly supported observables.

    Per observable: ``din2`` is the full residual (transport + viscous +
    mixed terms + dissipation pairing); ``idenmat`` drops the first-order eps
    terms, as in the limit identity. ``viscous`` and ``mixed`` are the sizes
    of the two first-order terms and ``eps_terms`` is |viscous| + |mixed|,
    the quantity the limit argument bounds. Rows ``max`` aggregate over the
    dictionary. For p-independent observables the integral is also compared
    with the density-side residual.
    """
    ctx = _ctx(cell)
    rep = VerificationReport(context=ctx)
    U, Hx, hess = measure_fields(cell, mu)
    d = cell.grid.d
    worst = dict.fromkeys(("din2", "idenmat", "viscous", "mixed", "eps_terms"), 0.0)
    p_free_vals = {}
    gram = _gram(hess, cell.kappa)
    derivs = {}
    for obs in observables:
        if obs.mode is not None and obs.mode.name not in derivs:
            derivs[obs.mode.name] = obs.mode.derivatives(mu.x, mu.t)
        dv = derivs[obs.mode.name] if obs.mode is not None else None
        terms = generator_terms(obs, mu.x, mu.p, mu.t, U, Hx, hess, cell.kappa, dv, gram)
        transport = weighted_sum(mu.w, terms["transport"])
        visc = weighted_sum(mu.w, terms["viscous"])
        mixed = weighted_sum(mu.w, terms["mixed"])
        if obs.p_free:
            diss_pair = 0.0
            total = weighted_sum(mu.w, terms["total"])
            p_free_vals[obs.name] = total
        else:
            _, _, ddq = obs._q(mu.p)
            f = dv[0] if dv is not None else np.ones_like(mu.t)
            diss_pair = 0.0
            for k in range(d):
                for j in range(d):
                    diss_pair += float(np.sum(dissipation.weights[:, k, j] * f * ddq[:, k, j]))
            total = transport + visc + mixed + diss_pair
        for key, val in (("din2", total), ("idenmat", transport + diss_pair), ("viscous", visc),
                         ("mixed", mixed), ("eps_terms", abs(visc) + abs(mixed))):
            worst[key] = max(worst[key], abs(val))
    for k in ("din2", "idenmat", "viscous", "mixed", "eps_terms"):
        rep.add(info_row("adjoint", f"max {k}", worst[k], 0.0, **ctx))
    if theta is not None and p_free_vals:
        modes = [o.mode for o in observables if o.p_free]
        per = stationarity_residual(theta, cell.drift, cell.eps, "analytic", modes, per_mode=True)
        diff = max(abs(abs(p_free_vals[o.name]) - per[o.mode.name]) for o in observables if o.p_free)
        rep.add(row("adjoint", "p_free_matches_stationarity", diff, 0.0, 0.0, metric="absolute", **ctx))
    return rep


# ---------------------------------------------------------------------------
# trends in eps


def loglog_slope(eps: Sequence[float], values: Sequence[float]) -> float:
    e = np.log(np.asarray(eps, dtype=float))
    v = np.log(np.maximum(np.abs(np.asarray(values, dtype=float)), 1e-300))
    return float(np.polyfit(e, v, 1)[0])


def _decreasing(vals: Sequence[float], atol: float = 1e-10) -> bool:
    """Non-increasing up to ``atol``; identically zero sequences qualify."""
    return all(b <= a + atol for a, b in zip(vals, vals[1:]))


def known_inviscid_hbar(spec, P) -> float | None:
    """Closed-form eps -> 0 effective Hamiltonian where one is available.

    free: |P|^2 / 2. zero: 0. time_linear: <c> P + <V> (exact for every eps).
    pendulum 1/2 p^2 + a cos 2 pi x: |a| on the flat piece |P| <= 4 sqrt|a| / pi.
    """
    P = np.atleast_1d(np.asarray(P, dtype=float))
    q = spec.parameters
    if spec.name == "free":
        return float(0.5 * P @ P)
    if spec.name == "zero":
        return 0.0
    if spec.name == "time_linear":
        return float(q["c_mean"] * P[0] + 0.5 * q["v_amp"])
    if spec.name == "pendulum":
        a = abs(float(q["amplitude"]))
        if abs(P[0]) <= 4.0 * math.sqrt(a) / math.pi:
            return a
    return None


def vanishing_viscosity_report(entries: Sequence[SweepEntry], inviscid_hbar: float | None = None,
                               modes: Sequence[Mode] | None = None,
                               slope_band: float = 0.2, min_rate: float = 0.5,
                               action_tol: float = 5e-2) -> VerificationReport:
    """Trends along one P column of an eps sweep (entries in decreasing eps)."""
    entries = sorted(entries, key=lambda e: -e.cell.eps)
    eps = [e.cell.eps for e in entries]
    cell0 = entries[0].cell
    ctx = {"spec": cell0.spec.name, "P": [float(v) for v in cell0.P], "eps": eps}
    rep = VerificationReport(context=ctx)
    hb = [e.cell.hbar for e in entries]
    for e, h in zip(entries, hb):
        rep.add(info_row("vanishing", f"hbar eps={e.cell.eps:g}", h, inviscid_hbar or 0.0,
                         eps=e.cell.eps))
    if inviscid_hbar is not None:
        gaps = [abs(h - inviscid_hbar) for h in hb]
        rep.add(row("vanishing", "hbar_gap_monotone", float(_decreasing(gaps)), 1.0, 0.0,
                    metric="absolute", gaps=gaps))
    # (a) residual scales like eps
    a_rms = []
    for e in entries:
        mu = e.mu
        b = eval_bundle(e.cell.spec, mu.x, mu.p, mu.t)
        dev = e.cell.phi_t.values.ravel()[mu.node] + b.H - e.cell.hbar
        a_rms.append(math.sqrt(weighted_sum(mu.w, dev ** 2)))
    if max(a_rms) > 1e-12:
        s = loglog_slope(eps, a_rms)
        rep.add(row("vanishing", "a_rms_slope", s, 1.0, slope_band, metric="absolute", a_rms=a_rms))
        rep.add(info_row("vanishing", "a_rms_slope_finest_pair", loglog_slope(eps[-2:], a_rms[-2:]),
                         1.0))
    # weak-* proxy: successive differences of expectations shrink
    modes = dictionary(cell0.grid.d) if modes is None else modes
    ex = np.array([[expectation(e.mu, lambda x, p, t, m=m: m.value(x, t)) for m in modes]
                   for e in entries])
    diffs = [float(np.max(np.abs(ex[k + 1] - ex[k]))) for k in range(len(entries) - 1)]
    rep.add(info_row("vanishing", "expectation_diffs_decreasing",
                     float(_decreasing(diffs)), 1.0, diffs=diffs))
    # dissipation and adjoint identity
    if all(e.dissipation is not None for e in entries):
        tm = [float(np.trace(e.dissipation.total_mass)) for e in entries]
        rep.add(info_row("vanishing", "dissipation_trace_max", max(tm), 0.0, trace=tm))
    if all(e.adjoint is not None for e in entries):
        iden = [e.adjoint.one("adjoint", "max idenmat").lhs for e in entries]
        terms = [e.adjoint.one("adjoint", "max eps_terms").lhs for e in entries]
        rep.add(row("vanishing", "idenmat_decreasing", float(_decreasing(iden)), 1.0, 0.0,
                    metric="absolute", values=iden))
        if max(terms) > 1e-12:
            rate = loglog_slope(eps, terms)
            rep.add(bound_row("vanishing", "eps_terms_rate", min_rate, rate, 0.0, values=terms))
            for part in ("viscous", "mixed"):
                vals = [e.adjoint.one("adjoint", f"max {part}").lhs for e in entries]
                if max(vals) > 1e-12:
                    rep.add(info_row("vanishing", f"{part}_rate", loglog_slope(eps, vals), 0.0,
                                     values=vals))
    # action identity int (p.D_pH - H) dmu = -Hbar (relative momentum form)
    if cell0.spec.convex:
        for e in entries:
            mu = e.mu
            b = eval_bundle(e.cell.spec, mu.x, mu.p, mu.t)
            rel_p = mu.p - e.cell.P
            act = weighted_sum(mu.w, np.sum(rel_p * b.Hp, axis=-1) - b.H)
            rep.add(row("vanishing", f"action eps={e.cell.eps:g}", act, -e.cell.hbar, action_tol,
                        metric="absolute", eps=e.cell.eps))
    rep.rows = [replace(r, context=dict(sorted({"spec": ctx["spec"], "P": ctx["P"], **r.context}.items())))
                for r in rep.rows]
    return rep

"""Command line driver: config parsing, the end-to-end pipeline and exports.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage
error, 3 solver non-convergence (partial artifacts are still written).

Every artifact except ``timings.json`` is a deterministic function of the
resolved configuration; wall-clock times live only in that file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .cell_solver import (
    CFLViolation,
    CellSolution,
    NonConvergence,
    SolverConfig,
    SweepReport,
    SweepRow,
    p_derivative_fields,
    solve_cell,
)
from .fokker_planck import DICTIONARY_VERSION, NegativeDensity, solve_theta
from .hamiltonian import CATALOG, make_spec
from .measures import (
    SupportLeak,
    build_measure,
    dissipation_matrix,
    expectation,
    observable_dictionary,
    support_radius,
)
from .sde_lab import AccuracyGuard, dynkin_residual, empirical_measure, simulate
from .torus_field import PeriodicGrid, dump_field
from .verify import (
    SweepEntry,
    VerificationReport,
    check_adjoint_identity,
    check_density,
    check_dissipation,
    check_estimates,
    check_mather_conditions,
    check_uniform_bounds,
    known_inviscid_hbar,
    row,
    vanishing_viscosity_report,
)

logger = logging.getLogger("mather_lab")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

REFERENCE_P = "-1, -0.5, 0, 0.5, 1"
REFERENCE_EPS = "0.2, 0.1, 0.05, 0.025, 0.0125"

# section -> key -> (type tag, default)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "experiment": {
        "spec": ("str", "pendulum"),
        "d": ("int?", None),
        "delta": ("float", 0.1),
        "P": ("vectors", REFERENCE_P),
        "eps": ("floats", REFERENCE_EPS),
        "grid": ("grid", "128x128"),
        "inviscid_hbar": ("float?", None),
    },
    "solver": {
        "cfl": ("float", 0.4),
        "drift_tol": ("float", 1e-8),
        "shape_tol": ("float", 1e-7),
        "max_periods": ("int", 5000),
        "p_box_margin": ("float", 1.0),
        "scheme": ("str", "lax_friedrichs"),
    },
    "fokker_planck": {
        "tol": ("float", 1e-12),
        "max_periods": ("int", 2000),
    },
    "sde": {
        "enabled": ("bool", True),
        "n_paths": ("int", 10000),
        "dt": ("float", 1e-3),
        "T": ("int", 200),
        "seed": ("int", 20240611),
        "burn_in": ("int", 10),
        "sample_every": ("int", 50),
        "eps": ("float", 0.05),
        "P": ("vector", "0"),
    },
    "verify": {
        "estimates_eps": ("floats", "0.05"),
        "p_fd_step": ("float", 1e-3),
        "bounds": ("bool", True),
        "tolerance_scale": ("float", 1.0),
    },
    "output": {
        "formats": ("strs", "csv"),
        "dictionary": ("str", DICTIONARY_VERSION),
        "fields": ("bool", True),
        "particles": ("bool", True),
    },
}
PARAM_SECTION = "parameters"


def _parse(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag.endswith("?"):
            if raw.lower() in ("", "none"):
                return None
            tag = tag[:-1]
        if tag == "str":
            return raw
        if tag == "strs":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tag == "floats":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if tag == "vector":
            return tuple(float(s) for s in raw.replace(",", " ").split())
        if tag == "vectors":
            # 1-d: "-1, 0, 1"; several dimensions: "0 0; 0.5 0"
            if ";" in raw:
                return tuple(tuple(float(v) for v in part.split()) for part in raw.split(";") if part.strip())
            return tuple((float(s),) for s in raw.split(",") if s.strip())
        if tag == "grid":
            n_x, n_t = raw.lower().split("x")
            return (int(n_x), int(n_t))
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tag}") from exc
    raise AssertionError(tag)


@dataclass(frozen=True)
class ExperimentConfig:
    spec: str
    d: int
    delta: float
    parameters: dict
    P: tuple
    eps: tuple
    n_x: int
    n_t: int
    inviscid_hbar: float | None
    solver: dict
    fokker_planck: dict
    sde: dict
    verify: dict
    output: dict

    def canonical(self) -> dict:
        out = asdict(self)
        out["P"] = [list(p) for p in self.P]
        out["eps"] = list(self.eps)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def make_spec(self):
        return make_spec(self.spec, self.d, self.delta, **self.parameters)

    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.d, self.n_x, self.n_t)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI file, apply ``overrides`` ({section: {key: raw string}}), validate."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    for sec, kv in (overrides or {}).items():
        if not cp.has_section(sec):
            cp.add_section(sec)
        for k, v in kv.items():
            cp.set(sec, k, v)
    for sec in cp.sections():
        if sec not in SCHEMA and sec != PARAM_SECTION:
            raise ConfigError(f"unknown section [{sec}]")
        if sec in SCHEMA:
            extra = set(cp[sec]) - set(SCHEMA[sec])
            if extra:
                raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
    values: dict[str, dict] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (tag, default) in keys.items():
            if cp.has_option(sec, key):
                values[sec][key] = _parse(tag, cp.get(sec, key), f"[{sec}] {key}")
            elif isinstance(default, str) and tag not in ("str",):
                values[sec][key] = _parse(tag, default, f"[{sec}] {key}")
            else:
                values[sec][key] = default
    ex = values["experiment"]
    name = ex["spec"]
    if name not in CATALOG:
        raise ConfigError(f"unknown spec {name!r}; catalog: {sorted(CATALOG)}")
    entry = CATALOG[name]
    d = ex["d"] if ex["d"] is not None else entry.dims[0]
    if d not in entry.dims:
        raise ConfigError(f"spec {name!r} supports d in {entry.dims}, got {d}")
    params = {}
    if cp.has_section(PARAM_SECTION):
        for k, raw in cp[PARAM_SECTION].items():
            if k not in entry.defaults:
                raise ConfigError(f"unknown parameter {k!r} for spec {name!r}; known: {sorted(entry.defaults)}")
            params[k] = _parse("float", raw, f"[{PARAM_SECTION}] {k}")
    n_x, n_t = ex["grid"]
    if n_x < 8 or n_t < 8:
        raise ConfigError(f"grid {n_x}x{n_t}: need n_x >= 8 and n_t >= 8")
    if not ex["P"] or not ex["eps"]:
        raise ConfigError("P and eps lists must be nonempty")
    if any(len(p) != d for p in ex["P"]):
        raise ConfigError(f"every P must have {d} components")
    if any(not e > 0 for e in ex["eps"]):
        raise ConfigError("eps values must be positive")
    if len(set(ex["eps"])) != len(ex["eps"]) or len(set(ex["P"])) != len(ex["P"]):
        raise ConfigError("duplicate P or eps values")
    sde = values["sde"]
    if sde["enabled"] and len(sde["P"]) != d:
        raise ConfigError(f"[sde] P must have {d} components")
    out = values["output"]
    if out["dictionary"] != DICTIONARY_VERSION:
        raise ConfigError(f"dictionary {out['dictionary']!r} unsupported; use {DICTIONARY_VERSION!r}")
    bad = set(out["formats"]) - {"csv", "json"}
    if bad or not out["formats"]:
        raise ConfigError(f"formats must be chosen from csv, json; got {out['formats']}")
    try:
        SolverConfig(**values["solver"])
        make_spec(name, d, ex["delta"], **params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if values["verify"]["tolerance_scale"] < 1.0:
        raise ConfigError("tolerance_scale must be >= 1")
    return ExperimentConfig(
        spec=name, d=d, delta=ex["delta"], parameters=dict(sorted(params.items())),
        P=tuple(tuple(p) for p in ex["P"]), eps=tuple(sorted(ex["eps"], reverse=True)),
        n_x=n_x, n_t=n_t, inviscid_hbar=ex["inviscid_hbar"], solver=values["solver"],
        fokker_planck=values["fokker_planck"], sde=sde, verify=values["verify"], output=out)


# ---------------------------------------------------------------------------
# deterministic writers


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=1, allow_nan=False) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence], formats) -> list[Path]:
    written = []
    if "csv" in formats:
        p = path.with_suffix(".csv")
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        written.append(p)
    if "json" in formats:
        p = path.with_suffix(".json")
        write_json(p, {"columns": list(header), "rows": [list(r) for r in rows]})
        written.append(p)
    return written


def _tag(P, eps: float) -> str:
    ps = "_".join(f"{v:g}" for v in P)
    return f"P{ps}_eps{eps:g}"


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Outcome:
    report: VerificationReport = field(default_factory=VerificationReport)
    failures: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def exit_code(self) -> int:
        if self.failures:
            return EXIT_SOLVER
        return EXIT_OK if self.report.passed else EXIT_VERIFY


class Pipeline:
    """Runs the stages for one configuration and writes into ``out``."""

    STAGES = ("cell", "sweep", "fp", "measure", "sde", "verify", "run")

    def __init__(self, cfg: ExperimentConfig, out: Path, stage: str = "run"):
        if stage not in self.STAGES:
            raise ValueError(stage)
        self.cfg = cfg
        self.out = Path(out)
        self.stage = stage
        self.spec = cfg.make_spec()
        self.grid = cfg.grid()
        self.scfg = cfg.solver_config()
        self.o = Outcome()
        self.scale = cfg.verify["tolerance_scale"]
        self.cells: dict[tuple, CellSolution] = {}
        self.entries: dict[tuple, SweepEntry] = {}

    # -- helpers
    def _time(self, key: str, t0: float) -> None:
        self.o.timings[key] = round(time.perf_counter() - t0, 6)

    def _wrote(self, paths) -> None:
        for p in ([paths] if isinstance(paths, Path) else paths):
            self.o.artifacts.append(str(Path(p).relative_to(self.out)))

    def _want(self, *stages: str) -> bool:
        return self.stage in stages

    # -- stages
    def solve_cells(self, P_list, eps_list) -> None:
        rows = []
        for P in P_list:
            prev = None
            for eps in eps_list:
                r = SweepRow(P=tuple(P), eps=eps)
                t0 = time.perf_counter()
                try:
                    sol = solve_cell(self.spec, np.array(P), eps, self.grid, self.scfg, init=prev)
                except (NonConvergence, CFLViolation) as exc:
                    r.error = f"{type(exc).__name__}: {exc}"
                    self.o.failures.append(f"cell {_tag(P, eps)}: {r.error}")
                    logger.warning("cell %s failed: %s", _tag(P, eps), exc)
                    prev = None
                else:
                    r.hbar, r.p_sup, r.residual_rms, r.periods = (sol.hbar, sol.p_sup,
                                                                  sol.residual_rms, sol.periods)
                    r.seconds = sol.seconds
                    self.cells[(tuple(P), eps)] = sol
                    prev = sol.phi.values
                self._time(f"cell {_tag(P, eps)}", t0)
                rows.append(r)
        self.sweep = SweepReport(rows)

    def write_sweep(self) -> None:
        fm = self.cfg.output["formats"]
        d = self.cfg.d
        header = ([f"P{i + 1}" for i in range(d)] if d > 1 else ["P"]) + [
            "eps", "hbar", "p_sup", "residual_rms", "periods", "status"]
        rows = [list(r.P) + [r.eps, r.hbar, r.p_sup, r.residual_rms, r.periods,
                             "ok" if r.error is None else r.error.split(":")[0]]
                for r in self.sweep.rows]
        self._wrote(write_table(self.out / "sweep", header, rows, fm))

    def densities(self) -> None:
        fpc = self.cfg.fokker_planck
        for key, sol in self.cells.items():
            t0 = time.perf_counter()
            try:
                theta = solve_theta(sol.drift, sol.eps, self.grid, tol=fpc["tol"],
                                    max_periods=fpc["max_periods"], viscosity=sol.kappa,
                                    source=_tag(*key))
            except (NonConvergence, NegativeDensity) as exc:
                self.o.failures.append(f"density {_tag(*key)}: {type(exc).__name__}: {exc}")
                continue
            self._time(f"density {_tag(*key)}", t0)
            self.entries[key] = SweepEntry(sol, theta)

    def measures(self) -> None:
        for key, e in self.entries.items():
            e.mu = build_measure(e.cell, e.theta)
            e.dissipation = dissipation_matrix(e.cell, e.mu)

    def dump_cell(self, key) -> None:
        sol = self.cells[key]
        base = self.out / "fields"
        base.mkdir(exist_ok=True)
        tag = _tag(*key)
        if self.cfg.output["fields"]:
            self._wrote(dump_field(sol.phi, base / f"phi_{tag}.csv"))
            self._wrote(base / f"phi_{tag}.json")
            e = self.entries.get(key)
            if e is not None:
                from .torus_field import ScalarField
                self._wrote(dump_field(ScalarField(self.grid, e.theta.values), base / f"theta_{tag}.csv"))
                self._wrote(base / f"theta_{tag}.json")
        e = self.entries.get(key)
        if e is not None and e.mu is not None and self.cfg.output["particles"]:
            pdir = self.out / "particles"
            pdir.mkdir(exist_ok=True)
            self._wrote(e.mu.dump(pdir / f"mu_{tag}.csv"))

    def cell_summaries(self) -> None:
        payload = {}
        for key, sol in self.cells.items():
            s = sol.summary()
            s.pop("seconds")
            e = self.entries.get(key)
            if e is not None:
                s["theta"] = {"periods": e.theta.periods, "min": float(np.min(e.theta.values)),
                              "mass_error": float(np.max(np.abs(e.theta.slice_mass() - 1.0)))}
                if e.dissipation is not None:
                    s["dissipation"] = json.loads(e.dissipation.to_json())
                    s["dissipation"]["min_eigenvalue"] = e.dissipation.min_eigenvalue()
            payload[_tag(*key)] = s
        self._wrote(write_json(self.out / "cells.json", payload))

    def verify(self, with_bounds: bool) -> None:
        rep = self.o.report
        sc = self.scale
        obs_cache = {}
        for key, e in sorted(self.entries.items()):
            cell = e.cell
            t0 = time.perf_counter()
            rep.extend(check_density(cell, e.theta, 1e-12 * sc))
            rep.extend(check_mather_conditions(cell, e.theta, e.mu, tol_a=1e-6 * sc, tol_c=1e-3 * sc))
            rep.extend(check_dissipation(cell, e.dissipation, 1e-10 * sc))
            radius = support_radius(cell.p_sup)
            if radius not in obs_cache:
                obs_cache[radius] = observable_dictionary(self.cfg.d, radius)
            e.adjoint = check_adjoint_identity(cell, e.mu, e.dissipation, obs_cache[radius], e.theta)
            rep.extend(e.adjoint)
            self._time(f"verify {_tag(*key)}", t0)
        h = self.cfg.verify["p_fd_step"]
        for P in self.cfg.P:
            col = [self.entries[(P, eps)] for eps in self.cfg.eps if (P, eps) in self.entries]
            for e in col:
                if e.cell.eps in self.cfg.verify["estimates_eps"]:
                    t0 = time.perf_counter()
                    e.pder = e.pder or p_derivative_fields(self.spec, e.cell.P, e.cell.eps, self.grid,
                                                           self.scfg, h, center=e.cell)
                    rep.extend(check_estimates(e.cell, e.theta, p_fd_step=h, cfg=self.scfg,
                                               pder=e.pder, tol_x=0.05 * sc, tol_P=0.10 * sc,
                                               tol_halving=0.01 * sc))
                    self._time(f"estimates {_tag(P, e.cell.eps)}", t0)
            if len(col) >= 3:
                t0 = time.perf_counter()
                if with_bounds:
                    rep.extend(check_uniform_bounds(col, slack=0.05 * sc, cfg=self.scfg, p_fd_step=h))
                inv = self.cfg.inviscid_hbar
                if inv is None:
                    inv = known_inviscid_hbar(self.spec, P)
                rep.extend(vanishing_viscosity_report(col, inviscid_hbar=inv, slope_band=0.2 * sc,
                                                      min_rate=0.5 / sc, action_tol=5e-2 * sc))
                self._time(f"sweep checks P={list(P)}", t0)

    def sde(self) -> dict | None:
        sc = self.cfg.sde
        key = (tuple(sc["P"]), sc["eps"])
        t0 = time.perf_counter()
        if key in self.cells:
            cell = self.cells[key]
        else:
            try:
                cell = solve_cell(self.spec, np.array(sc["P"]), sc["eps"], self.grid, self.scfg)
            except (NonConvergence, CFLViolation) as exc:
                self.o.failures.append(f"sde cell: {type(exc).__name__}: {exc}")
                return None
        e = self.entries.get(key)
        if e is None:
            theta = solve_theta(cell.drift, cell.eps, self.grid, tol=self.cfg.fokker_planck["tol"],
                                max_periods=self.cfg.fokker_planck["max_periods"], viscosity=cell.kappa)
            e = SweepEntry(cell, theta, build_measure(cell, theta))
        obs = observable_dictionary(self.cfg.d, support_radius(cell.p_sup))
        batch = simulate(cell, sc["n_paths"], sc["dt"], sc["T"], sc["seed"], sc["burn_in"],
                         sc["sample_every"])
        emp = empirical_measure(batch, obs)
        dyn = dynkin_residual(batch, obs)
        grid_vals = [expectation(e.mu, o.value) for o in obs]
        ctx = {"spec": self.spec.name, "P": list(sc["P"]), "eps": sc["eps"],
               "grid": f"{self.cfg.d}d:{self.cfg.n_x}x{self.cfg.n_t}", "dt": sc["dt"],
               "n_paths": sc["n_paths"], "T": sc["T"], "seed": sc["seed"]}
        rows = []
        for o, g, m, s, dm, ds in zip(obs, grid_vals, emp.mean, emp.se, dyn.mean, dyn.se):
            # deterministic observables have zero spread; 1e-12 absorbs rounding
            self.o.report.add(row("sde", f"expectation {o.name}", m, g, 3.0 * s + 1e-12,
                                  metric="absolute", se=s, **ctx))
            self.o.report.add(row("sde", f"dynkin {o.name}", dm, 0.0, 3.0 * ds + 1e-12,
                                  metric="absolute", se=ds, **ctx))
            rows.append([o.name, g, m, s, dm, ds])
        self._wrote(write_table(self.out / "sde", ["observable", "grid_value", "empirical_mean",
                                                   "empirical_se", "dynkin_residual", "dynkin_se"],
                                rows, self.cfg.output["formats"]))
        self._time("sde", t0)
        return batch.summary()

    # -- driver
    def run(self) -> Outcome:
        self.out.mkdir(parents=True, exist_ok=True)
        t_all = time.perf_counter()
        cfg = self.cfg
        sde_summary = None
        single = self._want("cell", "fp", "measure")
        P_list = cfg.P[:1] if single else cfg.P
        eps_list = cfg.eps[:1] if single else cfg.eps
        if self._want("sde"):
            P_list, eps_list = (), ()
        self.solve_cells(P_list, eps_list)
        if self._want("sweep", "verify", "run"):
            self.write_sweep()
        if self._want("fp", "measure", "verify", "run"):
            self.densities()
        if self._want("measure", "verify", "run"):
            self.measures()
        if self._want("cell", "fp", "measure", "run"):
            for key in sorted(self.cells):
                self.dump_cell(key)
        if self.cells:
            self.cell_summaries()
        if self._want("verify", "run"):
            self.verify(cfg.verify["bounds"])
        if self._want("sde") or (self._want("run") and cfg.sde["enabled"]):
            sde_summary = self.sde()
        if self.o.report.rows:
            self.o.report.context = {"spec": self.spec.name, "config_sha256": cfg.digest(),
                                     "grid": f"{cfg.d}d:{cfg.n_x}x{cfg.n_t}"}
            (self.out / "report.json").write_text(self.o.report.to_json() + "\n")
            (self.out / "report.txt").write_text(self.o.report.to_text())
            self._wrote([self.out / "report.json", self.out / "report.txt"])
        self._time("total", t_all)
        manifest = {
            "stage": self.stage,
            "config": cfg.canonical(),
            "config_sha256": cfg.digest(),
            "versions": _versions(),
            "seeds": {"sde": cfg.sde["seed"]},
            "sde": sde_summary,
            "failures": self.o.failures,
            "verification": None if not self.o.report.rows else {
                "passed": self.o.report.passed, "rows": len(self.o.report.rows),
                "failed_rows": len(self.o.report.failures())},
            "exit_code": self.o.exit_code(),
            "artifacts": sorted(self.o.artifacts),
            "wall_times": "timings.json",
        }
        write_json(self.out / "manifest.json", manifest)
        write_json(self.out / "timings.json", self.o.timings)
        return self.o


def _versions() -> dict:
    import numba
    import scipy
    return {"mather_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": ".".join(map(str, sys.version_info[:3]))}


# ---------------------------------------------------------------------------
# export


def export_artifact(path: str | Path, fmt: str, out: str | Path | None = None) -> Path:
    """Convert a CSV table to JSON or a JSON table/report to CSV."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"unknown artifact {path}")
    target = Path(out) if out else path.with_suffix(f".{fmt}")
    if target.resolve() == path.resolve():
        raise ConfigError("export target equals the source")
    if path.suffix == ".csv" and fmt == "json":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ConfigError(f"empty artifact {path}")
        write_json(target, {"columns": rows[0], "rows": [[_number(v) for v in r] for r in rows[1:]]})
    elif path.suffix == ".json" and fmt == "csv":
        data = json.loads(path.read_text())
        if isinstance(data, dict) and "columns" in data and "rows" in data:
            header, rows = data["columns"], data["rows"]
        elif isinstance(data, dict) and "rows" in data and data["rows"] and isinstance(data["rows"][0], dict):
            header = ["check", "name", "lhs", "rhs", "abs_residual", "rel_residual", "scale",
                      "tolerance", "metric", "passed"]
            rows = [[r[k] for k in header] for r in data["rows"]]
        else:
            raise ConfigError(f"{path} is not a table or report artifact")
        with target.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    elif path.suffix == f".{fmt}":
        raise ConfigError(f"{path} is already {fmt}")
    else:
        raise ConfigError(f"unknown artifact type {path.suffix!r}")
    return target


def _number(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


# ---------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mather-lab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("cell", "solve the first (P, eps) cell and dump its fields"),
                       ("sweep", "effective Hamiltonian over the (P, eps) table"),
                       ("fp", "cell plus stationary density"),
                       ("measure", "cell, density and graph measure with dissipation"),
                       ("sde", "stochastic check against the grid measure"),
                       ("verify", "all verification checks; exit 1 on failure"),
                       ("run", "full pipeline with dumps, verification and SDE")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--eps", nargs="+", type=str)
        p.add_argument("--P", nargs="+", type=str,
                       help="momenta; components of one vector joined by commas, e.g. 0.5,0")
        p.add_argument("--grid", type=str, help="NxM (space x time)")
        p.add_argument("--spec", type=str)
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--no-sde", action="store_true", help="skip the SDE stage of run")
    p = sub.add_parser("export", help="convert an artifact between csv and json")
    p.add_argument("artifact", type=Path)
    p.add_argument("--format", choices=("csv", "json"), required=True)
    p.add_argument("--out", type=Path)
    return ap


def _overrides(args) -> dict:
    ov: dict[str, dict] = {}
    ex = ov.setdefault("experiment", {})
    if args.spec:
        ex["spec"] = args.spec
    if args.eps:
        ex["eps"] = ", ".join(args.eps)
    if args.P:
        ex["P"] = "; ".join(p.replace(",", " ") for p in args.P) if any("," in p for p in args.P) \
            else ", ".join(args.P)
    if args.grid:
        ex["grid"] = args.grid
    if args.seed is not None:
        ov.setdefault("sde", {})["seed"] = str(args.seed)
    if args.format:
        ov.setdefault("output", {})["formats"] = args.format
    if args.no_sde:
        ov.setdefault("sde", {})["enabled"] = "false"
    return ov


def main(argv: Sequence[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export":
            print(export_artifact(args.artifact, args.format, args.out))
            return EXIT_OK
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = Pipeline(cfg, args.out, args.command).run()
    except (AccuracyGuard, SupportLeak) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = outcome.exit_code()
    rep = outcome.report
    if rep.rows:
        n_bad = len(rep.failures())
        print(f"{len(rep.rows)} report rows, {n_bad} failing")
        for r in rep.failures()[:20]:
            print(f"  FAIL {r.check}/{r.name}: lhs={r.lhs:.6g} rhs={r.rhs:.6g}")
    for f in outcome.failures:
        print(f"  solver failure: {f}")
    print(f"artifacts in {args.out} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())

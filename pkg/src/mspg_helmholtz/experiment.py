"""Run configuration, convergence studies and their file outputs.

A configuration is a flat set of dotted keys, read from a TOML file (nested
tables and dotted keys are equivalent there) and overridden by command line
flags. Mesh sizes are nominal: ``H = 2**-3`` means 8 cells per axis and
``h = 2**-7`` means 128 cells per axis, whatever the domain extent.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import Discretization
from .coefficients import EXAMPLE_DEFAULTS, builtin_example
from .corrector import CorrectorSolver, decay_profile
from .exceptions import ConfigError, SingularSystemError, UnsupportedFamilyError
from .interpolation import build_interpolation
from .mesh import build_hierarchy
from .pgsolve import MsPGFEM, best_approximation, diagnostics, solve_standard_fem
from .stability import Sampling, check_conditions, check_geometry, empirical_stability_sweep

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA = "mspg-helmholtz/convergence v1"
METHODS = ("mspgfem", "fem", "best")
COLUMNS = (
    "k", "H", "h", "kH", "m", "method", "error_V", "error_L2", "rel_error_V", "rel_error_L2",
    "interp_error_V", "quasi_opt", "n_solves", "status",
)


def _pow2(level: int) -> float:
    return 2.0 ** -int(level)


@dataclass(frozen=True)
class RunConfig:
    """All inputs of one experiment; see :data:`CONFIG_KEYS` for the file keys."""

    example: str = "example1"
    params: dict = field(default_factory=dict)
    k: float = 16.0
    H_list: tuple = (_pow2(3), _pow2(4), _pow2(5))
    h: float = _pow2(7)
    origin: tuple = (-1.0, -1.0)
    extent: tuple = (2.0, 2.0)
    tags: object = "robin"
    m_list: tuple = (1, 2, 3)
    methods: tuple = METHODS
    out_dir: str = "out"
    seed: int = 0
    max_fine_dofs: int = 400_000
    x0: Optional[tuple] = None
    c_g: Optional[float] = None
    samples_per_axis: Optional[int] = None
    decay_m_list: tuple = (1, 2, 3, 4)

    def cells(self, size: float) -> int:
        n = round(1.0 / size)
        if n < 1 or abs(n * size - 1.0) > 1e-9:
            raise ConfigError(f"mesh size {size!r} is not 1/N for an integer N")
        return n

    def levels(self, H: float) -> int:
        ratio = self.cells(self.h) // self.cells(H)
        lv = round(math.log2(ratio)) if ratio >= 1 else -1
        if lv < 0 or 2**lv * self.cells(H) != self.cells(self.h):
            raise ConfigError(f"h={self.h!r} is not H={H!r} times a power of 1/2")
        return lv

    @property
    def fine_dofs(self) -> int:
        return (self.cells(self.h) + 1) ** 2

    @property
    def center(self) -> tuple:
        return tuple(o + 0.5 * e for o, e in zip(self.origin, self.extent))

    def coefficients(self, k: Optional[float] = None):
        p = dict(self.params)
        p.update(k=self.k if k is None else k, origin=self.origin, extent=self.extent)
        return builtin_example(self.example, p)

    def mesh(self, H: float):
        return build_hierarchy(self.origin, self.extent, self.cells(H), self.levels(H), self.tags)

    def validate(self) -> "RunConfig":
        if self.example not in EXAMPLE_DEFAULTS:
            raise ConfigError(f"unknown example {self.example!r}; choose from {sorted(EXAMPLE_DEFAULTS)}")
        if not self.k > 0:
            raise ConfigError("k must be positive")
        if not self.H_list:
            raise ConfigError("H list is empty")
        if any(b >= a for a, b in zip(self.H_list, self.H_list[1:])):
            raise ConfigError(f"H list must be strictly decreasing, got {list(self.H_list)}")
        if self.h > min(self.H_list) * (1 + 1e-12):
            raise ConfigError(f"fine size h={self.h} exceeds the smallest coarse size {min(self.H_list)}")
        if self.k * self.h > 2:
            raise ConfigError(
                f"k*h = {self.k * self.h:.3g} > 2: the fine mesh does not resolve the wave; "
                "the reference solution needs k h small (refine h)"
            )
        for H in self.H_list:
            self.levels(H)
        if self.fine_dofs > self.max_fine_dofs:
            raise ConfigError(
                f"fine mesh has {self.fine_dofs} dofs, above the cap {self.max_fine_dofs} "
                "(raise run.max_fine_dofs to allow it)"
            )
        if any(int(m) < 1 for m in self.m_list):
            raise ConfigError("oversampling values must be >= 1")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {list(METHODS)}")
        return self


# file key -> RunConfig attribute
CONFIG_KEYS = {
    "physics.example": "example",
    "physics.k": "k",
    "physics.tags": "tags",
    "mesh.H_list": "H_list",
    "mesh.h": "h",
    "mesh.origin": "origin",
    "mesh.extent": "extent",
    "method.m_list": "m_list",
    "method.methods": "methods",
    "output.dir": "out_dir",
    "run.seed": "seed",
    "run.max_fine_dofs": "max_fine_dofs",
    "stability.x0": "x0",
    "stability.c_g": "c_g",
    "stability.samples_per_axis": "samples_per_axis",
    "decay.m_list": "decay_m_list",
}
PARAM_PREFIX = "physics.params."


def preset(name: str, paper_scale: bool = False) -> RunConfig:
    """The three experiment set-ups, at desk scale or at the full resolution."""
    if name not in ("example1", "example2", "example3"):
        raise ConfigError(f"unknown preset {name!r}")
    if paper_scale:
        return RunConfig(example=name, k=32.0, H_list=tuple(_pow2(i) for i in range(3, 7)), h=_pow2(8))
    return RunConfig(example=name)


def flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict) and name != "physics.tags":
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(attr: str, value):
    if attr in ("H_list", "m_list", "methods", "origin", "extent", "x0", "decay_m_list") and value is not None:
        if isinstance(value, (str, int, float)):
            value = [value]
        value = tuple(value)
        if attr in ("m_list", "decay_m_list"):
            return tuple(int(v) for v in value)
        if attr == "methods":
            return tuple(str(v) for v in value)
        return tuple(parse_size(v) if attr == "H_list" else float(v) for v in value)
    if attr == "h":
        return parse_size(value)
    if attr in ("k", "c_g") and value is not None:
        return float(value)
    if attr in ("seed", "max_fine_dofs", "samples_per_axis") and value is not None:
        return int(value)
    return value


def parse_size(value) -> float:
    """Accept ``0.125``, ``"2^-3"`` or ``"2**-3"``."""
    if isinstance(value, str):
        s = value.strip().replace("**", "^")
        if "^" in s:
            base, exp = s.split("^")
            return float(base) ** float(exp)
        return float(s)
    return float(value)


def apply_overrides(config: RunConfig, flat: dict) -> RunConfig:
    """Replace attributes from flat dotted keys; unknown keys raise ConfigError."""
    changes, params = {}, dict(config.params)
    for key, value in flat.items():
        if key.startswith(PARAM_PREFIX):
            params[key[len(PARAM_PREFIX):]] = value
        elif key in CONFIG_KEYS:
            attr = CONFIG_KEYS[key]
            changes[attr] = _coerce(attr, value)
        else:
            raise ConfigError(f"unknown config key {key!r}; known keys: {sorted(CONFIG_KEYS)} and {PARAM_PREFIX}*")
    if "example" in changes and changes["example"] != config.example and not any(k.startswith(PARAM_PREFIX) for k in flat):
        params = {}
    return replace(config, params=params, **changes)


def load_config(path=None, overrides: Optional[dict] = None, base: Optional[RunConfig] = None) -> RunConfig:
    config = base or RunConfig()
    if path is not None:
        with open(path, "rb") as fh:
            try:
                config = apply_overrides(config, flatten(tomllib.load(fh)))
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if overrides:
        config = apply_overrides(config, overrides)
    return config.validate()


# --- convergence study ------------------------------------------------------


@dataclass
class ConvergenceRow:
    k: float
    H: float
    h: float
    m: Optional[int]
    method: str
    error_V: float = float("nan")
    error_L2: float = float("nan")
    rel_error_V: float = float("nan")
    rel_error_L2: float = float("nan")
    interp_error_V: float = float("nan")
    quasi_opt: float = float("nan")
    n_solves: int = 0
    status: str = "ok"
    timings: dict = field(default_factory=dict)

    @property
    def kH(self) -> float:
        return self.k * self.H

    @property
    def label(self) -> str:
        return f"{self.method}_m{self.m}" if self.m is not None else self.method


@dataclass
class ConvergenceTable:
    rows: list
    config: Optional[RunConfig] = None
    notes: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def select(self, method=None, m=None) -> list:
        return [r for r in self.rows if (method is None or r.method == method) and (m is None or r.m == m)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "convergence.csv"
        path.write_text(self.to_csv())
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10e}"
    return str(v)


def _row_from_report(row: ConvergenceRow, rep) -> ConvergenceRow:
    row.error_V, row.error_L2 = rep.error_V, rep.error_L2
    row.rel_error_V = rep.error_V / rep.reference_V if rep.reference_V else float("nan")
    row.rel_error_L2 = rep.error_L2 / rep.reference_L2 if rep.reference_L2 else float("nan")
    row.interp_error_V, row.quasi_opt = rep.best_V, rep.quasi_optimality
    return row


def run_experiment(config: RunConfig, log=None) -> ConvergenceTable:
    """Reference solve once, then every requested method for every H (and m).

    Rows are ordered by H, then msPGFEM for each m, standard FEM, best
    approximation. A failed solve is recorded in the row status.
    """
    config.validate()
    log = log or (lambda msg: None)
    coeffs = config.coefficients()
    table = ConvergenceTable([], config)
    u_h = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for H in config.H_list:
            mesh = config.mesh(H)
            t0 = time.perf_counter()
            disc = Discretization(mesh, coeffs, "fine")
            op = build_interpolation(mesh)
            if u_h is None:
                u_h = solve_standard_fem(disc)
                table.timings["reference"] = time.perf_counter() - t0
            base = dict(k=config.k, H=float(H), h=float(config.h))
            if "mspgfem" in config.methods:
                for m in config.m_list:
                    row = ConvergenceRow(m=int(m), method="mspgfem", **base)
                    try:
                        est = MsPGFEM(int(m)).fit(mesh, coeffs, disc, op)
                        u_H = est.solve()
                        _row_from_report(row, diagnostics(disc, op, u_H, u_h))
                        row.n_solves = est.basis_.n_solves
                        row.timings = dict(est.timings_)
                    except (SingularSystemError, np.linalg.LinAlgError, MemoryError) as exc:
                        row.status = f"error: {exc}".replace("\n", " ")
                    table.rows.append(row)
                    log(f"H={H:g} m={m} rel_error_V={row.rel_error_V:.3e} {row.status}")
            if "fem" in config.methods:
                row = ConvergenceRow(m=None, method="fem", **base)
                try:
                    t = time.perf_counter()
                    u_H = solve_standard_fem(disc, "coarse", op.prolongation)
                    _row_from_report(row, diagnostics(disc, op, u_H, u_h))
                    row.timings = {"solve": time.perf_counter() - t}
                except (SingularSystemError, np.linalg.LinAlgError) as exc:
                    row.status = f"error: {exc}".replace("\n", " ")
                table.rows.append(row)
                log(f"H={H:g} fem rel_error_V={row.rel_error_V:.3e}")
            if "best" in config.methods:
                row = ConvergenceRow(m=None, method="best", **base)
                u_best = best_approximation(disc, op, u_h)
                _row_from_report(row, diagnostics(disc, op, u_best, u_h))
                table.rows.append(row)
    table.notes = sorted({str(w.message) for w in caught})
    return table


# --- plot data ----------------------------------------------------------------


def series_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def emit_plot_data(table, kind: str = "V", out_dir=".") -> dict:
    """Write log-log ready series files; returns ``{label: (path, slope)}``.

    For ``kind`` V or L2 ``table`` is a :class:`ConvergenceTable` and each
    method (msPGFEM per m) gets ``series_<kind>_<label>.csv`` with columns
    H and error. For ``kind="decay"`` ``table`` is a list of decay profiles
    and each gets ``series_decay_z<node>.csv`` with columns m and e(m).
    """
    out = Path(out_dir)
    result = {}
    if kind == "decay":
        for prof in table:
            pts = [(m, e) for m, e in zip(prof.m_values, prof.deviations)]
            result[f"z{prof.node}"] = (_write_series(out / f"series_decay_z{prof.node}.csv", ("m", "e"), pts), None)
        return result
    if kind not in ("V", "L2"):
        raise ValueError("kind must be 'V', 'L2' or 'decay'")
    col = "rel_error_V" if kind == "V" else "rel_error_L2"
    labels = []
    for r in table.rows:
        if r.label not in labels:
            labels.append(r.label)
    for label in labels:
        pts = [(r.H, getattr(r, col)) for r in table.rows if r.label == label and r.status == "ok"]
        path = _write_series(out / f"series_{kind}_{label}.csv", ("H", "error"), pts)
        good = [(H, e) for H, e in pts if e > 0 and np.isfinite(e)]
        slope = series_slope(*zip(*good)) if len(good) >= 2 else float("nan")
        result[label] = (path, slope)
    return result


def _write_series(path: Path, header, pts) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in pts:
            w.writerow([_fmt(float(v)) if not isinstance(v, int) else v for v in row])
    return path


# --- audit, decay and k sweep ---------------------------------------------------


def audit(config: RunConfig) -> dict:
    """Coefficient conditions and geometry for the configured problem.

    Families without derivative data report the S-function as unsupported;
    the geometry is checked regardless.
    """
    coeffs = config.coefficients()
    x0 = config.x0 or config.center
    mesh = build_hierarchy(config.origin, config.extent, config.cells(config.H_list[0]), 0, config.tags)
    sampling = Sampling(config.origin, config.extent, config.samples_per_axis, "domain")
    try:
        report = check_conditions(coeffs, x0, sampling, config.c_g, mesh)
    except UnsupportedFamilyError as exc:
        geom = check_geometry(mesh, x0)
        return {
            "example": config.example,
            "s_function": "unsupported",
            "reason": str(exc),
            "passed": None,
            "geometry_ok": geom.ok,
            "eta": geom.eta,
            "geometry": asdict(geom),
        }
    out = {"example": config.example, "s_function": "sampled"}
    out.update(report.to_dict())
    return out


def decay_study(config: RunConfig, node: Optional[int] = None):
    """Corrector deviation profile at the coarse node nearest the domain centre."""
    mesh = config.mesh(config.H_list[0])
    coeffs = config.coefficients()
    op = build_interpolation(mesh)
    if node is None:
        coords = mesh.node_coordinates("coarse")
        free = mesh.free_node_ids("coarse")
        node = int(free[np.argmin(np.linalg.norm(coords[free] - np.asarray(config.center), axis=1))])
    return decay_profile(mesh, coeffs, op, node, config.decay_m_list, CorrectorSolver(mesh, coeffs, op))


def sweep_k(config: RunConfig, k_list) -> list:
    mesh = build_hierarchy(config.origin, config.extent, config.cells(config.h), 0, config.tags)
    return empirical_stability_sweep(config.coefficients(), k_list, mesh)


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def config_dict(config: RunConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}

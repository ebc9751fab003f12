"""Reproducible verification runs: configuration, map registry, persisted outputs.

A run directory is ``<root>/<config-hash>/run-NNNN``; directories are never
reused, so repeated runs of one configuration accumulate side by side.  The
root defaults to ``$QUASIPLANE_OUTPUT_ROOT`` (or ``./runs``).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .distortion import SCHEMA_VERSION, resolve_dilatations, verify_main_inequality
from .geometry import BOUNDARY_MODES, MAX_LEVEL
from .maps import QCMapSpec, identity_map, linear_map, radial_stretch, shear_bump_map

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "QUASIPLANE_OUTPUT_ROOT"
CONFIG_SCHEMA = "quasiplane.config/1"


class ConfigError(ValueError):
    """Invalid configuration or map id; raised before any computation."""


class StepError(RuntimeError):
    """A pipeline step failed; ``step`` names it."""

    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"step {step!r} failed: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


# --------------------------------------------------------------------------
# map registry: "name" or "name:key=value,key=value"; vectors use '/'

def _vec(text):
    return [float(t) for t in str(text).split("/")]


def _build_identity(n=3):
    return identity_map(int(n))


def _build_radial(n=3, alpha=2.0):
    return radial_stretch(int(n), float(alpha))


def _build_linear(n=3, diag=None, A=None):
    if A is not None:
        rows = [_vec(r) for r in str(A).split("|")]
        return linear_map(np.array(rows))
    d = _vec(diag) if diag is not None else [2.0] + [1.0] * (int(n) - 1)
    return linear_map(np.diag(d))


def _build_shear(n=3, c=0.3, s=1.0, x0=None):
    x0 = _vec(x0) if x0 is not None else [0.0] * int(n)
    return shear_bump_map(int(n), float(c), x0, float(s))


MAPS = {
    "identity": (_build_identity, "x -> x", "n=3"),
    "radial_stretch": (_build_radial, "x -> |x|^(alpha-1) x", "n=3,alpha=2"),
    "linear": (_build_linear, "x -> A x, det A > 0", "diag=2/1/1 or A=row|row|row"),
    "shear_bump": (_build_shear, "x -> x + c exp(-|x-x0|^2/s^2) e_n", "n=3,c=0.3,s=1,x0=0/0/0"),
}


def parse_map_id(map_id: str) -> QCMapSpec:
    """Build a map from ``name[:key=value,...]``."""
    name, _, rest = str(map_id).partition(":")
    if name not in MAPS:
        raise ConfigError(f"unknown map {name!r}; known: {', '.join(MAPS)}")
    kw = {}
    for item in filter(None, (t.strip() for t in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"map parameter {item!r} is not key=value")
        kw[key.strip()] = val.strip()
    try:
        return MAPS[name][0](**kw)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid map {map_id!r}: {exc}") from None


def default_center(qc_map: QCMapSpec, k: int):
    """The point of the quasiplane above the origin: ``f^-1`` of ``f(0)`` with ``f_perp`` zeroed.

    For maps without an inverse, solves along the last axis.
    """
    n = qc_map.dim
    y = qc_map.eval(np.zeros(n))
    y[k:] = 0.0
    if qc_map.inverse_eval is not None:
        a = qc_map.inverse_eval(y)
    else:
        a = np.zeros(n)
        a[-1] = brentq(lambda t: qc_map.eval(np.r_[np.zeros(n - 1), t])[-1], -10.0, 10.0, xtol=1e-15)
    a = np.asarray(a, dtype=float)
    a[np.abs(a) < 1e-15] = 0.0
    return a


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    map: str = "identity"
    a: Optional[tuple] = None
    k: int = 1
    r: float = 1.0
    R: float = 2.0
    tau_steps: int = 8
    mesh_level: int = 5
    tube_radius: float = 0.05
    boundary: str = "snap"
    p: Optional[float] = None
    seed: int = 0
    tol: float = 1e-8
    dil_samples: int = 100_000
    K_override: Optional[float] = None
    volume_level: int = 4
    volume_nodes: int = 6
    volume_panels: int = 24
    mc_samples: int = 200_000
    distortion_level: int = 4
    profile_distortion: bool = True
    mesh_budget: bool = True
    output_dir: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.a is not None:
            object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        self.validate()

    def validate(self):
        if not (self.r > 0 and self.R > 0):
            raise ConfigError("radii must be positive")
        if not self.r < self.R:
            raise ConfigError(f"need r < R, got r={self.r}, R={self.R}")
        if not (isinstance(self.mesh_level, int) and 0 <= self.mesh_level <= MAX_LEVEL):
            raise ConfigError(f"mesh_level must be an integer in [0, {MAX_LEVEL}]")
        if not self.tube_radius > 0:
            raise ConfigError("tube_radius must be positive")
        limit = 10.0 * angular_resolution(self.mesh_level)
        if not self.tube_radius < limit:
            raise ConfigError(f"tube_radius {self.tube_radius} must be below 10 x mesh resolution = {limit:.4g}")
        if self.tau_steps < 1:
            raise ConfigError("tau_steps must be >= 1")
        if self.boundary not in BOUNDARY_MODES:
            raise ConfigError(f"boundary must be one of {BOUNDARY_MODES}")
        if self.p is not None and not self.p >= 2:
            raise ConfigError("p must be >= 2")
        if self.K_override is not None and not self.K_override >= 1:
            raise ConfigError("K_override must be >= 1")
        if not self.k >= 1:
            raise ConfigError("k must be >= 1")
        if MAPS.get(str(self.map).partition(":")[0]) is None:
            raise ConfigError(f"unknown map {self.map!r}")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def canonical(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "output_dir"}
        d["a"] = None if self.a is None else list(self.a)
        d["schema"] = CONFIG_SCHEMA
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("schema", None)
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: _coerce(known[k], v) for k, v in d.items()})

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_config_file(path))


def angular_resolution(level: int) -> float:
    """Mean edge angle of the unit icosphere at ``level`` (about ``1.1 / 2^level``)."""
    return 1.1071487177940904 / 2.0 ** level


_INT_FIELDS = {"k", "tau_steps", "mesh_level", "seed", "dil_samples", "volume_level",
               "volume_nodes", "volume_panels", "mc_samples", "distortion_level"}


def _coerce(f, v):
    if v is None or (isinstance(v, str) and v.lower() in ("none", "null", "")):
        return None
    try:
        if f.name in _INT_FIELDS:
            if isinstance(v, float) and not v.is_integer():
                raise ValueError(v)
            return int(v)
        if f.name in ("profile_distortion", "mesh_budget"):
            if isinstance(v, str):
                if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(v)
                return v.lower() in ("true", "1", "yes")
            return bool(v)
        if f.name == "a":
            return tuple(_vec(v)) if isinstance(v, str) else tuple(float(x) for x in v)
        if f.name in ("map", "boundary", "output_dir"):
            return str(v)
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {f.name!r}: {v!r}") from None


def read_config_file(path) -> dict:
    """JSON object, or flat ``key = value`` lines (``#`` comments)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return d
    d = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        d[key.strip()] = val.strip()
    return d


# --------------------------------------------------------------------------
# persistence

def output_root(config: ExperimentConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def new_run_dir(root: Path, key: str) -> Path:
    base = Path(root) / key
    base.mkdir(parents=True, exist_ok=True)
    i = len([p for p in base.iterdir() if p.name.startswith("run-")])
    while True:
        d = base / f"run-{i:04d}"
        try:
            d.mkdir()
            return d
        except FileExistsError:
            i += 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    schema: str
    run_dir: str
    wall_times: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    status: str = "incomplete"

    def record(self, path: Path):
        self.files[path.name] = {"sha256": _sha256(path), "bytes": path.stat().st_size}

    def write(self, run_dir: Path) -> Path:
        p = Path(run_dir) / "manifest.json"
        p.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return p


PLOT_SCRIPT = """\
# gnuplot script: lambda(tau) of the verification run
set xlabel "tau"
set ylabel "lambda"
set key off
plot "lambda_profile.dat" using 1:2 with linespoints
"""


def _profile_csv(profile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema", "tau", "lambda", "l", "L", "V", "flags"])
    for r in profile.rows:
        w.writerow([SCHEMA_VERSION, *(repr(float(x)) for x in (r.tau, r.lam, r.l, r.L, r.V)),
                    "|".join(r.flags)])
    return buf.getvalue()


class _Steps:
    def __init__(self, manifest):
        self.manifest = manifest

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except (KeyboardInterrupt, StepError):
            raise
        except Exception as exc:
            raise StepError(name, exc) from exc
        finally:
            self.manifest.wall_times[name] = time.perf_counter() - t0


def run_verify(config: ExperimentConfig, root=None):
    """Run the full chain for one configuration and persist it.

    Returns ``(report, manifest, run_dir)``.  Files: ``report.json``,
    ``report.csv``, ``profile.csv``, ``lambda_profile.dat`` + ``plot_lambda.gp``,
    ``diagnostics.jsonl``, ``config.json`` and ``manifest.json``.
    """
    config.validate()
    qc_map = parse_map_id(config.map)
    n = qc_map.dim
    if n != 3:
        raise ConfigError("verification runs need a map of R^3")
    if not 1 <= config.k <= n - 2:
        raise ConfigError(f"k must be in [1, {n - 2}]")
    key = config.config_hash()
    run_dir = new_run_dir(Path(root) if root is not None else output_root(config), key)
    manifest = RunManifest(key, __version__, SCHEMA_VERSION, str(run_dir))
    steps = _Steps(manifest)

    cfg_path = run_dir / "config.json"
    cfg_path.write_text(json.dumps(config.canonical(), indent=2, sort_keys=True) + "\n")
    manifest.record(cfg_path)

    try:
        a = np.asarray(config.a, dtype=float) if config.a is not None else steps.run(
            "center", default_center, qc_map, config.k)
        dil = steps.run("dilatations", resolve_dilatations, qc_map, a, config.R,
                        samples=config.dil_samples, seed=config.seed)
        diag_path = run_dir / "diagnostics.jsonl"
        diag_path.touch()
        volume_kw = dict(level=config.volume_level, nodes=config.volume_nodes,
                         panels=config.volume_panels, mc_samples=config.mc_samples, seed=config.seed)
        report = steps.run(
            "verify", verify_main_inequality, qc_map, a, config.r, config.R,
            tau_steps=config.tau_steps, mesh_level=config.mesh_level, tube_radius=config.tube_radius,
            k=config.k, p=config.p, tol=config.tol, seed=config.seed, K_override=config.K_override,
            volume_kw=volume_kw, mesh_budget=config.mesh_budget, diagnostics_path=diag_path,
            dilatations=dil, boundary=config.boundary)
        report.map_id = config.map
        if config.profile_distortion:
            steps.run("distortion", report.profile.fill_distortion, qc_map, a,
                      level=config.distortion_level, volume_kw=volume_kw)
            steps.run("profile invariants", report.profile.check_invariants)
    except StepError as exc:
        manifest.status = f"error in step {exc.step!r}"
        for path in sorted(run_dir.iterdir()):
            manifest.record(path)
        manifest.write(run_dir)
        raise

    t0 = time.perf_counter()
    outputs = {
        "report.json": report.to_json() + "\n",
        "report.csv": report.to_csv(),
        "profile.csv": _profile_csv(report.profile),
        "lambda_profile.dat": report.profile.to_table(),
        "plot_lambda.gp": PLOT_SCRIPT,
    }
    for name, text in outputs.items():
        path = run_dir / name
        path.write_text(text)
        manifest.record(path)
    manifest.record(diag_path)
    manifest.wall_times["write"] = time.perf_counter() - t0
    manifest.status = "pass" if report.passed else "fail"
    manifest.write(run_dir)
    log.info("run %s: %s", run_dir, manifest.status)
    return report, manifest, run_dir


# --------------------------------------------------------------------------
# sweeps

SWEEP_PARAMETERS = {"mesh_level": int, "tube_radius": float, "tau_steps": int}


@dataclass
class SweepResult:
    parameter: str
    values: list
    reports: list
    run_dirs: list
    table: list
    sweep_dir: Optional[Path] = None

    def lambda_at_r(self) -> np.ndarray:
        return np.array([row["lambda_r"] for row in self.table])

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["schema", "parameter", "value", "lambda_r", "integral_lambda", "log_lhs",
                "delta_lambda_r", "delta_ratio", "delta_integral", "integral_budget", "pass"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.table:
            w.writerow({c: (repr(float(v)) if isinstance(v, float) else v)
                        for c, v in {"schema": SCHEMA_VERSION, "parameter": self.parameter, **row}.items()})
        return buf.getvalue()


def run_sweep(base: ExperimentConfig, parameter: str, values, root=None) -> SweepResult:
    """One verification run per value plus a delta table.

    ``delta_ratio`` is the previous delta over the current one; for a
    second-order discretisation under grid halving it tends to 4.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_PARAMETERS)}")
    values = [SWEEP_PARAMETERS[parameter](v) for v in values]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    configs = [base.replace(**{parameter: v}) for v in values]
    root = Path(root) if root is not None else output_root(base)
    reports, dirs, table = [], [], []
    prev = None
    for v, cfg in zip(values, configs):
        rep, _, d = run_verify(cfg, root=root)
        reports.append(rep)
        dirs.append(d)
        first = next((r for r in rep.profile.rows if r.usable), None)
        lam_r = first.lam if first is not None else math.nan
        row = {"value": v, "lambda_r": lam_r, "integral_lambda": rep.integral,
               "log_lhs": rep.log_lhs, "delta_lambda_r": math.nan, "delta_ratio": math.nan,
               "delta_integral": math.nan, "integral_budget": rep.integral_budget,
               "pass": rep.passed}
        if prev is not None:
            row["delta_lambda_r"] = lam_r - prev["lambda_r"]
            row["delta_integral"] = rep.integral - prev["integral_lambda"]
            if math.isfinite(prev["delta_lambda_r"]) and row["delta_lambda_r"] != 0:
                row["delta_ratio"] = prev["delta_lambda_r"] / row["delta_lambda_r"]
        table.append(row)
        prev = row
    res = SweepResult(parameter, values, reports, dirs, table)
    key = hashlib.sha256(json.dumps([c.config_hash() for c in configs]).encode()).hexdigest()[:16]
    sdir = new_run_dir(root, f"sweep-{key}")
    manifest = RunManifest(key, __version__, SCHEMA_VERSION, str(sdir))
    p = sdir / "sweep.csv"
    p.write_text(res.to_csv())
    manifest.record(p)
    p = sdir / "runs.json"
    p.write_text(json.dumps([str(d) for d in dirs], indent=2) + "\n")
    manifest.record(p)
    manifest.status = "pass" if all(r.passed for r in reports) else "fail"
    manifest.write(sdir)
    res.sweep_dir = sdir
    return res

"""Command line: ``python -m quasiplane <command>``.

Exit codes: 0 every checked inequality holds, 1 an inequality fails beyond its
numerical budget, 2 usage or configuration error, 3 a computation step failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from . import __version__
from .distortion import (
    capacity_energy_check,
    capacity_round_ring,
    check_growth_exponent,
)
from .eta import estimate_lambda
from .geometry import Sphere, build_sphere_mesh, mark_cap_complement, mark_quasiplane_trace
from .inequalities import run_property_suite
from .runner import (
    MAPS,
    ConfigError,
    ExperimentConfig,
    StepError,
    default_center,
    parse_map_id,
    read_config_file,
    run_sweep,
    run_verify,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


def _floats(text):
    return [float(t) for t in str(text).replace("/", ",").split(",") if t.strip()]


def _center(args, qc_map):
    return np.array(_floats(args.a)) if args.a else default_center(qc_map, args.k)


# --------------------------------------------------------------------------
# subcommands

def cmd_maps(args):
    for name, (build, formula, params) in MAPS.items():
        f = build()
        k = "sampled" if f.declared_K is None else f"K_O={f.declared_KO:.6g} K_I={f.declared_KI:.6g}"
        print(f"{name:15s} {formula:40s} defaults: {params:28s} {k}")
    return EXIT_OK


def cmd_eta(args):
    t0 = time.perf_counter()
    if args.cap is not None:
        mesh = build_sphere_mesh(Sphere(np.zeros(3), 1.0), args.level)
        mesh = mark_cap_complement(mesh, [0.0, 0.0, 1.0], args.cap, boundary=args.boundary)
        est = estimate_lambda(mesh, args.p, tol=args.tol, seed=args.seed)
        print(f"cap theta={args.cap}: lambda = {est.lam:.10g}   lambda*theta = {est.lam * args.cap:.10g}")
    else:
        qc_map = parse_map_id(args.map)
        a = _center(args, qc_map)
        mesh = build_sphere_mesh(Sphere(a, args.tau), args.level)
        mesh = mark_quasiplane_trace(mesh, qc_map, args.k, args.tube * args.tau, boundary=args.boundary)
        if mesh.trace_empty:
            print(f"S(a, {args.tau}) misses the quasiplane: lambda undefined")
            return EXIT_FAIL
        est = estimate_lambda(mesh, args.p or qc_map.dim, tol=args.tol, seed=args.seed,
                              tube_radius=args.tube)
        print(f"{args.map} a={a.tolist()} tau={args.tau}: lambda = {est.lam:.10g}")
    d = est.diagnostics()
    print(f"p={est.p} level={est.mesh_level} iterations={est.iterations} residual={est.residual:.3g}"
          f" trusted={est.trusted} lambda_p2={est.lambda_p2:.6g} ({time.perf_counter() - t0:.1f}s)")
    if args.json:
        print(json.dumps(d, default=float))
    return EXIT_OK if est.trusted else EXIT_FAIL


def cmd_distortion(args):
    qc_map = parse_map_id(args.map)
    a = _center(args, qc_map)
    chk = check_growth_exponent(qc_map, a, args.r, args.R, K_used=args.K, level=args.level)
    print(f"{args.map} a={a.tolist()} r={args.r} R={args.R} K={chk.K_used:.6g} beta={chk.beta:.6g}")
    print(f"  l(r)={chk.l_r:.8g} L(r)={chk.L_r:.8g} l(R)={chk.l_R:.8g} L(R)={chk.L_R:.8g}")
    print(f"  V(r)={chk.V_r:.8g} V(R)={chk.V_R:.8g}")
    for q in chk.inequalities:
        print(f"  {q.name:36s} margin={q.log_margin:+.6g} budget={q.log_budget:.2g}"
              f"  {'ok' if q.holds else 'VIOLATED'}")
    return EXIT_OK if chk.passed else EXIT_FAIL


def cmd_capacity(args):
    cap = capacity_round_ring(args.n, args.r, args.R)
    energy = capacity_energy_check(args.n, args.r, args.R)
    rel = abs(energy - cap) / cap
    print(f"capacity(n={args.n}, r={args.r}, R={args.R}) = {cap:.12g}")
    print(f"energy check = {energy:.12g} (relative difference {rel:.2e})")
    return EXIT_OK if rel <= 1e-8 else EXIT_FAIL


def _config_from_args(args) -> ExperimentConfig:
    d = {}
    for key in ("map", "k", "r", "R", "tau_steps", "mesh_level", "tube_radius", "boundary", "p",
                "seed", "tol", "dil_samples", "K_override", "output_dir"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "a", None):
        d["a"] = _floats(args.a)
    if getattr(args, "no_distortion", False):
        d["profile_distortion"] = False
    if args.config:
        d.update(read_config_file(args.config))
    return ExperimentConfig.from_dict(d)


def cmd_verify(args):
    config = _config_from_args(args)
    report, manifest, run_dir = run_verify(config)
    print(f"exp(int_r^R lambda dtau / K_O) = exp({report.integral:.8g} / {report.KO_used:.6g})"
          f" = {report.lhs:.8g}")
    print(f"V(a,R)/V(a,r)                  = {report.V_R:.8g} / {report.V_r:.8g} = {report.mid:.8g}")
    print(f"D_*^(2n) (R/r)^(n beta)        = {report.rhs:.8g}   (K={report.K_used:.6g} [{report.K_source}],"
          f" beta={report.beta:.6g})")
    print(f"log margins: lhs<=mid {report.lhs_mid.log_margin:+.6g} (budget {report.lhs_mid.log_budget:.2g}),"
          f" mid<=rhs {report.mid_rhs.log_margin:+.6g} (budget {report.mid_rhs.log_budget:.2g})")
    if report.flags:
        print("flags: " + "; ".join(report.flags))
    print(f"{'PASS' if report.passed else 'FAIL'}   run directory: {run_dir}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_matrix_props(args):
    dims = [int(d) for d in args.dims.split(",")]
    cases = [(n, k) for n in dims for k in range(1, n - 1)]
    if not cases:
        raise ConfigError("no admissible (n, k) with 1 <= k <= n-2 for the given dims")
    t0 = time.perf_counter()
    rows = run_property_suite(args.trials, seed=args.seed, cases=cases, tol=args.tol)
    bad = [r for r in rows if r["violations"]]
    print(f"{'n':>2} {'k':>2} {'check':16s} {'evaluations':>12s} {'violations':>10s} {'min slack':>12s}")
    for r in rows:
        print(f"{r['n']:>2} {r['k']:>2} {r['check']:16s} {r['evaluations']:>12d} {r['violations']:>10d}"
              f" {r['min_slack']:>12.3g}")
    total = sum(r["violations"] for r in rows)
    print(f"{total} violations ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if not bad else EXIT_FAIL


def cmd_sweep(args):
    config = _config_from_args(args)
    values = [v for v in args.values.split(",") if v.strip()]
    res = run_sweep(config, args.param, values)
    sys.stdout.write(res.to_csv())
    print(f"sweep directory: {res.sweep_dir}")
    return EXIT_OK if all(r.passed for r in res.reports) else EXIT_FAIL


# --------------------------------------------------------------------------
# parser

def _add_map_args(p, default_map="identity"):
    p.add_argument("--map", default=default_map, help="map id, e.g. radial_stretch:alpha=0.5")
    p.add_argument("--a", help="centre on the quasiplane, comma separated (default: above the origin)")
    p.add_argument("--k", type=int, default=1)


def _add_run_args(p):
    p.add_argument("--config", help="JSON or key=value file; its entries override flags")
    p.add_argument("--map", help="map id, e.g. shear_bump:c=0.3,s=1")
    p.add_argument("--a", help="centre on the quasiplane, comma separated")
    p.add_argument("--k", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--R", type=float)
    p.add_argument("--tau-steps", dest="tau_steps", type=int)
    p.add_argument("--level", dest="mesh_level", type=int)
    p.add_argument("--tube", dest="tube_radius", type=float, help="tube radius relative to tau")
    p.add_argument("--boundary", choices=("snap", "offset"))
    p.add_argument("--p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--dil-samples", dest="dil_samples", type=int)
    p.add_argument("--K-override", dest="K_override", type=float,
                   help="K fed to the closed-form bound (testing the failure path)")
    p.add_argument("--out", dest="output_dir", help="output root (default $QUASIPLANE_OUTPUT_ROOT or ./runs)")
    p.add_argument("--no-distortion", action="store_true", help="skip l, L, V per profile row")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasiplane", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("maps", help="list built-in maps")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("eta", help="first p-Rayleigh quotient on one sphere")
    _add_map_args(p)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--tube", type=float, default=0.05)
    p.add_argument("--p", type=float)
    p.add_argument("--cap", type=float, help="solve on a geodesic cap of this angle instead")
    p.add_argument("--boundary", choices=("snap", "offset"), default="snap")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eta)

    p = sub.add_parser("distortion", help="l, L, V and the ring-distortion chain")
    _add_map_args(p)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--K", type=float, help="K used in the bounds (default: declared or sampled)")
    p.add_argument("--level", type=int, default=4)
    p.set_defaults(func=cmd_distortion)

    p = sub.add_parser("capacity", help="round-ring capacity and its energy check")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("verify-main", help="full inequality chain, persisted run")
    _add_run_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("matrix-props", help="random property runs of the pointwise inequalities")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="3,4,5")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_matrix_props)

    p = sub.add_parser("sweep", help="repeat verify-main over one parameter")
    _add_run_args(p)
    p.add_argument("--param", required=True, choices=["mesh_level", "tube_radius", "tau_steps"])
    p.add_argument("--values", required=True, help="comma separated")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, OSError) else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

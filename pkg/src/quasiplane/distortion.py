"""Distortion, volume growth, ring capacity and the radial inequality chain.

Notation follows the usual quasiconformal conventions: for a map ``f`` and a
centre ``a``

* ``l(a, t)`` / ``L(a, t)``: min / max of ``|f(x) - f(a)|`` over ``S(a, t)``,
* ``V(a, t)``: integral of the Jacobian over ``B(a, t)``,
* ``D_*(K) = exp(4 K (K + 1) sqrt(K - 1))`` and ``beta = K^(1/(n-1))``.

Every computed term carries a numerical error budget.  An inequality
``x <= y`` is reported with ``margin = log y - log x`` and a log-space budget;
it holds when ``margin + budget >= 0`` (no violation beyond the numerical
error) and is *robust* when ``margin - budget > 0``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import gamma

from .geometry import Sphere, build_sphere_mesh
from .maps import QCMapSpec, estimate_dilatations

SCHEMA_VERSION = "quasiplane.report/1"
K_INFLATION = 1.05


class VolumeDiscrepancyError(RuntimeError):
    """Shell quadrature and Monte-Carlo volume estimates disagree beyond budget."""


class ExtremumSearchError(RuntimeError):
    """Local refinement of l or L did not settle within the iteration budget."""


# --------------------------------------------------------------------------
# closed forms


def dstar(K: float) -> float:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return math.exp(4.0 * K * (K + 1.0) * math.sqrt(K - 1.0))


def log_dstar(K: float) -> float:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return 4.0 * K * (K + 1.0) * math.sqrt(K - 1.0)


def beta(n: int, K: float) -> float:
    return K ** (1.0 / (n - 1))


def log_main_bound(n: int, K: float, r: float, R: float) -> float:
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    return 2 * n * log_dstar(K) + n * beta(n, K) * math.log(R / r)


def main_bound(n: int, K: float, r: float, R: float) -> float:
    """``D_*(K)^(2n) (R/r)^(n beta)``; overflows to ``inf`` for large K."""
    lb = log_main_bound(n, K, r, R)
    return math.exp(lb) if lb < 709.0 else math.inf


def sphere_area(n: int) -> float:
    """``omega_{n-1}``, the area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0)


def ball_volume(n: int) -> float:
    return sphere_area(n) / n


def capacity_round_ring(n: int, r: float, R: float) -> float:
    """n-capacity of the ring ``B(0,R) \\ closed B(0,r)``: ``omega_{n-1} (ln R/r)^(1-n)``."""
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    return sphere_area(n) * math.log(R / r) ** (1 - n)


def capacity_energy_check(n: int, r: float, R: float, nodes: int = 16, panels: int = 8) -> float:
    """n-energy of ``u = ln(R/|x|) / ln(R/r)`` by Gauss-Legendre in the radius.

    ``|grad u| = 1 / (rho ln(R/r))`` integrated against ``omega_{n-1} rho^(n-1) d rho``
    on geometrically graded panels.
    """
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = r * (R / r) ** np.linspace(0.0, 1.0, panels + 1)
    log_ratio = math.log(R / r)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x
        grad = 1.0 / (rho * log_ratio)
        total += 0.5 * (hi - lo) * np.sum(w * grad ** n * rho ** (n - 1))
    return float(sphere_area(n) * total)


# --------------------------------------------------------------------------
# l(a,t), L(a,t)


@dataclass(frozen=True)
class MinMaxRadius:
    l: float
    L: float
    argmin: np.ndarray
    argmax: np.ndarray
    budget: float  # relative, covers the local-refinement stopping tolerance


def _tangent_frame(v):
    v = v / np.linalg.norm(v)
    e = np.eye(3)[np.argmin(np.abs(v))]
    e1 = np.cross(v, e)
    e1 /= np.linalg.norm(e1)
    return v, e1, np.cross(v, e1)


def min_max_radius(qc_map: QCMapSpec, a, t: float, level: int = 4, starts: int = 64,
                   xtol: float = 1e-10, maxiter: int = 500) -> MinMaxRadius:
    """Extremes of ``|f(x) - f(a)|`` on ``S(a, t)``.

    Dense vertex sampling of an icosphere followed by local refinement from the
    ``starts`` best vertices for each side.  The returned ``l`` can only
    over-estimate the true minimum and ``L`` only under-estimate the maximum.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    a = np.asarray(a, dtype=float)
    if qc_map.dim != 3:
        raise ValueError("min_max_radius samples 2-spheres; map must act on R^3")
    fa = qc_map.eval(a)
    mesh = build_sphere_mesh(Sphere(a, t), level)
    dirs = (mesh.vertices - a) / t
    dist = np.linalg.norm(qc_map.eval(mesh.vertices) - fa, axis=1)

    def refine(sign):
        order = np.argsort(sign * dist)[:starts]
        best_val, best_x = sign * dist[order[0]], mesh.vertices[order[0]]
        for i in order:
            v, e1, e2 = _tangent_frame(dirs[i])

            def point(u):
                w = v + u[0] * e1 + u[1] * e2
                return a + t * w / np.linalg.norm(w)

            def obj(u):
                return sign * np.linalg.norm(qc_map.eval(point(u)) - fa)

            res = minimize(obj, np.zeros(2), method="Nelder-Mead",
                           options={"xatol": xtol, "fatol": xtol * max(dist.max(), 1e-300),
                                    "maxiter": maxiter})
            if not res.success:
                raise ExtremumSearchError(f"local refinement did not settle: {res.message}")
            if res.fun < best_val:
                best_val, best_x = float(res.fun), point(res.x)
        return sign * best_val, best_x

    lo, xlo = refine(+1.0)
    hi, xhi = refine(-1.0)
    return MinMaxRadius(float(lo), float(hi), xlo, xhi, budget=1e-8)


# --------------------------------------------------------------------------
# V(a, r)


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    mc_value: float
    mc_stderr: float
    discrepancy: float  # relative |quad - mc| / quad
    budget: float  # relative error budget attached to ``value``


def _sphere_rule(level):
    mesh = build_sphere_mesh(Sphere(np.zeros(3), 1.0), level)
    b = mesh.barycenters
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    w = mesh.areas * (4.0 * np.pi / mesh.areas.sum())
    return b, w


def _shell_quadrature(qc_map, a, r, level, nodes, panels):
    dirs, wdir = _sphere_rule(level)
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.concatenate([[0.0], r * 0.5 ** np.arange(panels - 1, -1, -1)])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x
        for rk, wk in zip(rho, w):
            J = qc_map.det(a + rk * dirs)
            total += 0.5 * (hi - lo) * wk * rk ** 2 * np.dot(wdir, J)
    return float(total)


def volume_growth(qc_map: QCMapSpec, a, r: float, level: int = 4, nodes: int = 6,
                  panels: int = 24, mc_samples: int = 200_000, seed=0,
                  mc_sigmas: float = 5.0, rel_floor: float = 2e-3) -> VolumeEstimate:
    """``V(a, r)``: integral of ``J(x, f)`` over ``B(a, r)`` in R^3.

    Product rule: Gauss-Legendre in the radius on dyadically graded panels
    (so ``|x|^(-s)`` singularities at the centre stay integrable) times an
    icosphere barycentre rule in the direction.  A Monte-Carlo estimate with
    uniform radius and direction cross-checks it; disagreement beyond
    ``mc_sigmas`` standard errors plus ``rel_floor`` raises.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    a = np.asarray(a, dtype=float)
    if qc_map.dim != 3:
        raise ValueError("volume_growth integrates over balls in R^3")
    quad = _shell_quadrature(qc_map, a, r, level, nodes, panels)
    coarse = _shell_quadrature(qc_map, a, r, max(level - 1, 0), nodes, panels)

    rng = np.random.default_rng(seed)
    g = rng.standard_normal((mc_samples, 3))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    rho = r * rng.random(mc_samples)
    vals = 4.0 * np.pi * r * rho ** 2 * qc_map.det(a + rho[:, None] * dirs)
    mc = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(mc_samples))

    disc = abs(quad - mc) / abs(quad)
    allowed = (mc_sigmas * se) / abs(quad) + rel_floor
    if disc > allowed:
        raise VolumeDiscrepancyError(
            f"V({a.tolist()}, {r}): quadrature {quad:.8g} vs Monte-Carlo {mc:.8g} +- {se:.2g}")
    budget = max(abs(quad - coarse) / abs(quad), 1e-12)
    return VolumeEstimate(quad, mc, se, disc, budget)


# --------------------------------------------------------------------------
# profiles and reports


@dataclass
class ProfileRow:
    tau: float
    lam: float = float("nan")
    l: float = float("nan")
    L: float = float("nan")
    V: float = float("nan")
    flags: tuple = ()
    solver: Optional[dict] = None

    @property
    def usable(self) -> bool:
        return np.isfinite(self.lam) and not self.flags


@dataclass
class RadialProfile:
    rows: list

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.tau)

    @property
    def tau(self) -> np.ndarray:
        return np.array([r.tau for r in self.rows])

    @property
    def lam(self) -> np.ndarray:
        return np.array([r.lam for r in self.rows])

    def fill_distortion(self, qc_map, a, level: int = 4, volume_kw=None):
        volume_kw = volume_kw or {}
        for row in self.rows:
            mm = min_max_radius(qc_map, a, row.tau, level=level)
            row.l, row.L = mm.l, mm.L
            row.V = volume_growth(qc_map, a, row.tau, **volume_kw).value
        return self

    def check_invariants(self):
        for row in self.rows:
            if np.isfinite(row.l) and row.l > row.L * (1 + 1e-12):
                raise AssertionError(f"l > L at tau={row.tau}")
        V = np.array([r.V for r in self.rows])
        V = V[np.isfinite(V)]
        if np.any(np.diff(V) <= 0):
            raise AssertionError("V must increase strictly with tau")

    def integral(self):
        """Trapezoid of lambda over usable rows and a grid-halving error estimate."""
        ok = np.array([r.usable for r in self.rows])
        t, y = self.tau[ok], self.lam[ok]
        if t.size < 2:
            return float("nan"), float("inf")
        full = float(np.trapezoid(y, t))
        if t.size >= 3 and (t.size - 1) % 2 == 0:
            half = float(np.trapezoid(y[::2], t[::2]))
            err = abs(full - half) / 3.0
        else:
            err = abs(full) * 1e-2
        return full, err

    def to_table(self) -> str:
        lines = ["# tau lambda l L V flags"]
        for r in self.rows:
            vals = " ".join(repr(float(x)) for x in (r.tau, r.lam, r.l, r.L, r.V))
            lines.append(f"{vals} {'|'.join(r.flags) or '-'}")
        return "\n".join(lines) + "\n"


@dataclass
class Inequality:
    name: str
    value: float
    bound: float
    log_margin: float
    log_budget: float

    @property
    def adjusted_margin(self) -> float:
        return self.log_margin + self.log_budget

    @property
    def holds(self) -> bool:
        return self.adjusted_margin >= 0

    @property
    def robust(self) -> bool:
        return self.log_margin - self.log_budget > 0


def _ineq(name, log_value, log_bound, budget):
    return Inequality(name, _safe_exp(log_value), _safe_exp(log_bound), log_bound - log_value, budget)


def _safe_exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def resolve_dilatations(qc_map: QCMapSpec, center, radius, samples: int = 100_000, seed=0,
                        inflation: float = K_INFLATION):
    """K_O for the left side and K for the bound, with provenance strings.

    Declared values are used verbatim.  Otherwise K_O is the sampled estimate
    (a lower bound: dividing by it can only enlarge the left side) and K is the
    sampled estimate times ``inflation``.
    """
    if qc_map.declared_KO is not None and qc_map.declared_KI is not None:
        return qc_map.declared_KO, "declared", qc_map.declared_K, "declared", None
    est = estimate_dilatations(qc_map, center, radius, samples, seed)
    return (est.KO_est, f"sampled lower bound over {est.domain}, {samples} samples",
            est.K_est * inflation, f"sampled over {est.domain} x {inflation}", est)


@dataclass
class GrowthCheck:
    a: list
    r: float
    R: float
    K_used: float
    beta: float
    l_r: float
    L_r: float
    l_R: float
    L_R: float
    V_r: float
    V_R: float
    inequalities: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(q.holds for q in self.inequalities)


def check_growth_exponent(qc_map: QCMapSpec, a, r: float, R: float, K_used: Optional[float] = None,
                          level: int = 4, volume_kw=None, dil_kw=None) -> GrowthCheck:
    """Evaluate the ring-distortion chain at radii ``r < R``.

    Checked, each with a log-space budget:
    ``l(R)/L(r) <= (R/r)^beta``, ``L(R)/l(r) <= D_*^2 (R/r)^beta``,
    ``V(R)/V(r) <= D_*^(2n) (R/r)^(n beta)`` and ``L(rho)/l(rho) <= D_*`` at
    ``rho in {r, R}``.  Violations are findings, not exceptions.
    """
    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    a = np.asarray(a, dtype=float)
    n = qc_map.dim
    if K_used is None:
        _, _, K_used, _, _ = resolve_dilatations(qc_map, a, R, **(dil_kw or {}))
    b = beta(n, K_used)
    ld = log_dstar(K_used)
    mr = min_max_radius(qc_map, a, r, level=level)
    mR = min_max_radius(qc_map, a, R, level=level)
    vr = volume_growth(qc_map, a, r, **(volume_kw or {}))
    vR = volume_growth(qc_map, a, R, **(volume_kw or {}))
    mb = mr.budget + mR.budget
    lrr = math.log(R / r)
    ineqs = [
        _ineq("l(R)/L(r) <= (R/r)^beta", math.log(mR.l / mr.L), b * lrr, mb),
        _ineq("L(R)/l(r) <= D*^2 (R/r)^beta", math.log(mR.L / mr.l), 2 * ld + b * lrr, mb),
        _ineq("V(R)/V(r) <= D*^2n (R/r)^(n beta)", math.log(vR.value / vr.value),
              2 * n * ld + n * b * lrr, vr.budget + vR.budget),
        _ineq("L(r)/l(r) <= D*", math.log(mr.L / mr.l), ld, 2 * mr.budget),
        _ineq("L(R)/l(R) <= D*", math.log(mR.L / mR.l), ld, 2 * mR.budget),
    ]
    return GrowthCheck(a.tolist(), r, R, K_used, b, mr.l, mr.L, mR.l, mR.L,
                       vr.value, vR.value, ineqs)


@dataclass
class VerificationReport:
    map_id: str
    a: list
    r: float
    R: float
    n: int
    k: int
    p: float
    KO_used: float
    KO_source: str
    K_used: float
    K_source: str
    beta: float
    integral: float
    integral_budget: float
    lambda_mesh_budget: float
    lhs: float
    mid: float
    rhs: float
    log_lhs: float
    log_mid: float
    log_rhs: float
    lhs_mid: Inequality
    mid_rhs: Inequality
    V_r: float
    V_R: float
    V_budget: float
    mesh_level: int
    tube_radius: float
    tau_steps: int
    flags: list = field(default_factory=list)
    profile: Optional[RadialProfile] = field(default=None, repr=False)
    schema: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return self.lhs_mid.holds and self.mid_rhs.holds and not self.flags

    def flat(self) -> dict:
        d = {
            "schema": self.schema, "map_id": self.map_id,
            "a": " ".join(repr(float(x)) for x in self.a),
            "r": self.r, "R": self.R, "n": self.n, "k": self.k, "p": self.p,
            "KO_used": self.KO_used, "KO_source": self.KO_source,
            "K_used": self.K_used, "K_source": self.K_source, "beta": self.beta,
            "integral_lambda": self.integral, "integral_budget": self.integral_budget,
            "lambda_mesh_budget": self.lambda_mesh_budget,
            "lhs": self.lhs, "mid": self.mid, "rhs": self.rhs,
            "log_lhs": self.log_lhs, "log_mid": self.log_mid, "log_rhs": self.log_rhs,
            "margin_lhs_mid": self.lhs_mid.log_margin, "budget_lhs_mid": self.lhs_mid.log_budget,
            "margin_mid_rhs": self.mid_rhs.log_margin, "budget_mid_rhs": self.mid_rhs.log_budget,
            "pass_lhs_mid": self.lhs_mid.holds, "pass_mid_rhs": self.mid_rhs.holds,
            "robust_lhs_mid": self.lhs_mid.robust, "robust_mid_rhs": self.mid_rhs.robust,
            "V_r": self.V_r, "V_R": self.V_R, "V_budget": self.V_budget,
            "mesh_level": self.mesh_level, "tube_radius": self.tube_radius,
            "tau_steps": self.tau_steps, "flags": "|".join(self.flags), "pass": self.passed,
        }
        return d

    def to_json(self) -> str:
        d = self.flat()
        if self.profile is not None:
            d["profile"] = [
                {"tau": r.tau, "lambda": r.lam, "flags": list(r.flags)} for r in self.profile.rows
            ]
        return json.dumps(d, indent=2, default=_json_default)

    def to_csv(self) -> str:
        d = self.flat()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(d), lineterminator="\n")
        w.writeheader()
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in d.items()})
        return buf.getvalue()

    def summary(self) -> str:
        return (f"{self.map_id}: exp(int lambda / K_O) = {self.lhs:.6g} <= V(R)/V(r) = {self.mid:.6g}"
                f" <= D_*^{{2n}} (R/r)^{{n beta}} = {self.rhs:.6g}   "
                f"[margins {self.lhs_mid.log_margin:+.4g}, {self.mid_rhs.log_margin:+.4g}]"
                f"  {'PASS' if self.passed else 'FAIL'}")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Inequality):
        return asdict(o)
    raise TypeError(type(o))


def verify_main_inequality(qc_map: QCMapSpec, a, r: float, R: float, tau_steps: int = 8,
                           mesh_level: int = 5, tube_radius: float = 0.05, k: int = 1,
                           p: Optional[float] = None, tol: float = 1e-8, seed=0,
                           K_override: Optional[float] = None, dil_kw=None, volume_kw=None,
                           mesh_budget: bool = True, diagnostics_path=None,
                           dilatations=None, boundary: str = "snap") -> VerificationReport:
    """Evaluate ``exp(int_r^R lambda / K_O) <= V(R)/V(r) <= D_*^(2n) (R/r)^(n beta)``.

    ``lambda`` lower-bounds the variational constant of the sphere complement,
    so the left inequality is a consequence of the volume-growth differential
    inequality; the right one is the ring-distortion chain.  ``K_override``
    replaces the K used in the bound (the left side keeps the resolved K_O).
    ``dilatations`` takes a precomputed :func:`resolve_dilatations` result.
    """
    from .eta import estimate_lambda, lambda_radial_profile
    from .geometry import mark_quasiplane_trace

    if not 0 < r < R:
        raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
    a = np.asarray(a, dtype=float)
    n = qc_map.dim
    p = float(n if p is None else p)

    if dilatations is None:
        dilatations = resolve_dilatations(qc_map, a, R, **(dil_kw or {}))
    KO, KO_src, K, K_src, _ = dilatations
    if K_override is not None:
        K, K_src = float(K_override), "override"
    radii = np.linspace(r, R, tau_steps + 1)
    profile = lambda_radial_profile(qc_map, a, radii, mesh_level, tube_radius, p=p, k=k,
                                    tol=tol, seed=seed, diagnostics_path=diagnostics_path,
                                    boundary=boundary)
    flags = []
    if any("untrusted" in row.flags for row in profile.rows):
        flags.append("untrusted lambda rows")
    integral, trap_err = profile.integral()

    # mesh budget: relative change of lambda one level down at the first usable radius
    mesh_rel = 0.0
    if mesh_budget and mesh_level > 0:
        row = next((row for row in profile.rows if row.usable), None)
        if row is not None:
            coarse = build_sphere_mesh(Sphere(a, row.tau), mesh_level - 1)
            cm = mark_quasiplane_trace(coarse, qc_map, k, tube_radius * row.tau, boundary=boundary)
            lam_c = estimate_lambda(cm, p, tol=tol, seed=seed).lam
            mesh_rel = abs(lam_c - row.lam) / row.lam

    vr = volume_growth(qc_map, a, r, **(volume_kw or {}))
    vR = volume_growth(qc_map, a, R, **(volume_kw or {}))
    log_lhs = integral / KO
    log_mid = math.log(vR.value / vr.value)
    log_rhs = log_main_bound(n, K, r, R)
    lhs_budget = (trap_err + mesh_rel * abs(integral)) / KO
    v_budget = vr.budget + vR.budget
    lhs_mid = _ineq("exp(int lambda/K_O) <= V(R)/V(r)", log_lhs, log_mid, lhs_budget + v_budget)
    mid_rhs = _ineq("V(R)/V(r) <= D*^2n (R/r)^(n beta)", log_mid, log_rhs, v_budget)
    return VerificationReport(
        map_id=qc_map.name, a=a.tolist(), r=float(r), R=float(R), n=n, k=k, p=p,
        KO_used=KO, KO_source=KO_src, K_used=K, K_source=K_src, beta=beta(n, K),
        integral=integral, integral_budget=trap_err, lambda_mesh_budget=mesh_rel,
        lhs=_safe_exp(log_lhs), mid=_safe_exp(log_mid), rhs=_safe_exp(log_rhs),
        log_lhs=log_lhs, log_mid=log_mid, log_rhs=log_rhs,
        lhs_mid=lhs_mid, mid_rhs=mid_rhs, V_r=vr.value, V_R=vR.value, V_budget=v_budget,
        mesh_level=mesh_level, tube_radius=tube_radius, tau_steps=tau_steps,
        flags=flags, profile=profile,
    )

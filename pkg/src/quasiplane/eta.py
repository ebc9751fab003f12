"""First p-Rayleigh quotient with zero boundary values on meshed sphere domains.

For a mesh whose Dirichlet vertices carry the thickened quasiplane trace, the
quantity computed here is

    lambda = min  (int |grad_S phi|^p)^(1/p) / (int |phi|^p)^(1/p)

over P1 fields vanishing on the Dirichlet set.  The gradient term is exact for
P1 fields (per-triangle constants); the ``|phi|^p`` term uses the three-vertex
rule per triangle, i.e. a lumped mass.

Solver: the p = 2 problem is a generalised symmetric eigenproblem solved by
inverse power iteration; the result is then continued in p along a fixed
schedule.  At each p the quotient is minimised by normalised gradient descent
with backtracking, with the gradient preconditioned by the Hessian of the
p-energy (SPD after flooring ``|grad phi|``); the line search keeps every step
monotone in the quotient.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import (
    EmptyFreeRegionError,
    Sphere,
    SurfaceMesh,
    build_sphere_mesh,
    mark_quasiplane_trace,
)

log = logging.getLogger(__name__)

GRAD_FLOOR = 1e-14
P_STEP = 0.25


class NoBoundaryError(ValueError):
    """The mesh has no Dirichlet vertex; the quotient infimum is 0 via constants."""


@dataclass(frozen=True, eq=False)
class LambdaEstimate:
    lam: float
    p: float
    mesh_level: int
    tube_radius: float
    iterations: int
    residual: float
    minimizer: np.ndarray = field(repr=False)
    trusted: bool = True
    lambda_p2: float = float("nan")
    sign_gap: float = 0.0
    wall_time: float = 0.0
    history: tuple = field(default=(), repr=False)

    def diagnostics(self) -> dict:
        return {
            "level": self.mesh_level,
            "tube_radius": self.tube_radius,
            "p": self.p,
            "lambda": self.lam,
            "iterations": self.iterations,
            "residual": self.residual,
            "trusted": self.trusted,
            "wall_time": self.wall_time,
        }


class _Problem:
    """Discrete p-energy and p-mass restricted to the free vertices."""

    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        self.free = np.flatnonzero(mesh.free)
        self.G = mesh.gradient_operator[:, self.free].tocsc()
        self.GT = self.G.T.tocsr()
        self.area = mesh.areas
        self.m = mesh.vertex_weights[self.free]
        self.n_free = self.free.size

    def grads(self, u):
        return (self.G @ u).reshape(-1, 3)

    def energy(self, u, p):
        g = np.linalg.norm(self.grads(u), axis=1)
        return float(np.dot(self.area, g ** p))

    def mass(self, u, p):
        return float(np.dot(self.m, np.abs(u) ** p))

    def energy_grad(self, u, p):
        g3 = self.grads(u)
        g = np.maximum(np.linalg.norm(g3, axis=1), GRAD_FLOOR)
        w = p * self.area * g ** (p - 2.0)
        return self.GT @ (w[:, None] * g3).ravel()

    def mass_grad(self, u, p):
        return p * self.m * np.abs(u) ** (p - 2.0) * u

    def weighted_stiffness(self, weights):
        d = sp.diags(np.repeat(self.area * weights, 3))
        return (self.GT @ d @ self.G).tocsc()

    def energy_hessian(self, u, p, floor_rel=1e-3):
        """Hessian of the p-energy, ``p |g|^(p-2) (I + (p-2) g g^T/|g|^2)`` per triangle.

        ``|g|`` is floored at ``floor_rel * max |g|`` so the matrix stays SPD where
        the field is flat.
        """
        g3 = self.grads(u)
        gn = np.linalg.norm(g3, axis=1)
        w = p * self.area * np.maximum(gn, max(floor_rel * float(gn.max()), GRAD_FLOOR)) ** (p - 2.0)
        gh = g3 / np.maximum(gn, GRAD_FLOOR)[:, None]
        blocks = w[:, None, None] * (np.eye(3) + (p - 2.0) * gh[:, :, None] * gh[:, None, :])
        idx = np.arange(3 * len(gn)).reshape(-1, 3)
        B = sp.csr_matrix((blocks.ravel(), (np.repeat(idx, 3, axis=1).ravel(), np.tile(idx, (1, 3)).ravel())),
                          shape=(3 * len(gn), 3 * len(gn)))
        return (self.GT @ B @ self.G).tocsc()

    def quotient(self, u, p):
        return (self.energy(u, p) / self.mass(u, p)) ** (1.0 / p)

    def normalize(self, u, p):
        return u / self.mass(u, p) ** (1.0 / p)

    def full(self, u):
        out = np.zeros(self.mesh.n_vertices)
        out[self.free] = u
        return out


def _check_domain(mesh: SurfaceMesh):
    if not mesh.dirichlet_mask.any():
        raise NoBoundaryError("mesh has no Dirichlet vertex: lambda undefined (constants give 0)")
    if mesh.dirichlet_mask.all():
        raise EmptyFreeRegionError("mesh has no free vertex")
    ncomp, _ = mesh.free_components()
    if ncomp != 1:
        raise ValueError(f"free region must be connected, found {ncomp} components")


def _inverse_power(prob: _Problem, tol: float, seed, maxiter: int):
    K = prob.weighted_stiffness(np.ones(prob.mesh.n_triangles))
    lu = splu(K)
    rng = np.random.default_rng(seed)
    u = 0.5 + rng.random(prob.n_free)
    m = prob.m
    u /= np.sqrt(np.dot(m, u * u))
    mu_old = np.inf
    res = np.inf
    for it in range(1, maxiter + 1):
        u = lu.solve(m * u)
        u /= np.sqrt(np.dot(m, u * u))
        Ku = K @ u
        mu = float(np.dot(u, Ku))
        res = float(np.linalg.norm(Ku - mu * m * u) / np.linalg.norm(Ku))
        if abs(mu_old - mu) <= tol * mu and res <= np.sqrt(tol):
            return mu, np.abs(u), it, res, True
        mu_old = mu
    return mu, np.abs(u), maxiter, res, False


def _descend(prob: _Problem, u, p: float, tol: float, maxiter: int):
    """Minimise the p-quotient from ``u``; returns (u, R = lambda^p, iters, residual, converged)."""
    u = prob.normalize(u, p)
    R = prob.energy(u, p)
    res = np.inf
    for it in range(1, maxiter + 1):
        grad = prob.energy_grad(u, p) - R * prob.mass_grad(u, p)
        d = -splu(prob.energy_hessian(u, p)).solve(grad)
        res = float(np.max(np.abs(d)) / np.max(np.abs(u)))
        slope = float(np.dot(grad, d))
        if slope >= 0:
            return u, R, it, res, res <= np.sqrt(tol)
        t = 1.0
        while True:
            v = u + t * d
            Rv = prob.energy(v, p) / prob.mass(v, p)
            if Rv <= R + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                return u, R, it, res, res <= np.sqrt(tol)
        u = prob.normalize(v, p)
        dR = R - Rv
        R = prob.energy(u, p)
        if dR <= tol * R and res <= np.sqrt(tol):
            return u, R, it, res, True
    return u, R, maxiter, res, False


def p_schedule(p: float, step: float = P_STEP):
    ps = list(np.arange(2.0 + step, p, step))
    ps = [float(q) for q in ps if q < p - 1e-12]
    return ps + [float(p)] if p > 2.0 else []


def estimate_lambda(mesh: SurfaceMesh, p: float, tol: float = 1e-8, seed=0,
                    maxiter: int = 2000, tube_radius: float = float("nan"),
                    p_step: float = P_STEP) -> LambdaEstimate:
    """Minimise the p-Rayleigh quotient over P1 fields vanishing on the Dirichlet set.

    Parameters
    ----------
    mesh : SurfaceMesh
        Sphere mesh with at least one Dirichlet and one free vertex; the free
        vertices must form one edge-connected component.
    p : float
        Exponent, ``p >= 2``; the quasiplane inequality uses ``p = n``.
    tol : float
        Relative tolerance on the quotient; the first-order residual is driven
        below ``sqrt(tol)``.
    seed
        Seed of the random positive start vector of the p = 2 iteration.

    Returns
    -------
    LambdaEstimate
        ``trusted`` is False when any stage hit ``maxiter`` before converging.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    _check_domain(mesh)
    prob = _Problem(mesh)

    mu, u, iters, res, ok = _inverse_power(prob, tol, seed, maxiter)
    lam2 = float(np.sqrt(mu))
    history = [(2.0, lam2, iters, res)]
    R = mu
    q = 2.0
    for q in p_schedule(p, p_step):
        u, R, it, res, ok_q = _descend(prob, u, q, tol, maxiter)
        iters += it
        ok = ok and ok_q
        history.append((q, R ** (1.0 / q), it, res))

    # ground state is one-signed: restart from |phi| and keep the lower quotient
    sign_gap = 0.0
    if p > 2.0:
        u_abs, R_abs, it, res_abs, ok_abs = _descend(prob, np.abs(u), p, tol, maxiter)
        iters += it
        sign_gap = (R ** (1 / p) - R_abs ** (1 / p)) / R ** (1 / p)
        if R_abs <= R:
            u, R, res, ok = u_abs, R_abs, res_abs, ok and ok_abs
    else:
        u = prob.normalize(u, 2.0)

    lam = float(R ** (1.0 / p)) if p > 2.0 else lam2
    if not ok:
        log.warning("lambda solve did not converge (p=%s, level=%s)", p, mesh.level)
    return LambdaEstimate(lam, float(p), mesh.level, tube_radius, iters, float(res),
                          prob.full(u), bool(ok), lam2, float(sign_gap),
                          time.perf_counter() - t0, tuple(history))


def descend_quotient(mesh: SurfaceMesh, start, p: float, tol: float = 1e-8, maxiter: int = 5000):
    """Plain descent at fixed ``p`` from an arbitrary start (no continuation)."""
    _check_domain(mesh)
    prob = _Problem(mesh)
    u, R, it, res, ok = _descend(prob, np.asarray(start, dtype=float)[prob.free], p, tol, maxiter)
    return float(R ** (1.0 / p)), prob.full(u), it, ok


def rayleigh_quotient(mesh: SurfaceMesh, field, p: float) -> float:
    """``(int |grad phi|^p)^(1/p) / (int |phi|^p)^(1/p)`` for a nodal field."""
    prob = _Problem(mesh)
    return prob.quotient(np.asarray(field, dtype=float)[prob.free], p)


def shifted_quotient(mesh: SurfaceMesh, field, p: float, A: float) -> float:
    """Quotient with ``|phi - A|^p`` in the denominator, integrated over the whole sphere."""
    field = np.asarray(field, dtype=float)
    prob = _Problem(mesh)
    num = prob.energy(field[prob.free], p)
    den = float(np.dot(mesh.vertex_weights, np.abs(field - A) ** p))
    return (num / den) ** (1.0 / p)


def sup_over_A_scan(mesh: SurfaceMesh, p: float, A_grid, delta: float, tol: float = 1e-8,
                    seed=0, maxiter: int = 2000, base: Optional[LambdaEstimate] = None):
    """Guarded inf over admissible phi of the A-shifted quotient, for each A.

    Without a guard every ``A != 0`` is driven to 0 by ``phi = 0``; here phi is
    restricted to ``int |phi|^p >= delta``.  On that set the infimum is the
    smaller of the minimum over the sphere ``int |phi|^p = delta`` and the
    ``|phi| -> inf`` limit, which equals lambda.  Returns ``[(A, value)]``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if base is None:
        base = estimate_lambda(mesh, p, tol=tol, seed=seed, maxiter=maxiter)
    prob = _Problem(mesh)
    w_all = mesh.vertex_weights
    w_dir = float(w_all[mesh.dirichlet_mask].sum())
    m = prob.m
    phi_star = base.minimizer[prob.free]
    lu = splu(prob.weighted_stiffness(np.ones(mesh.n_triangles)) + sp.diags(m).tocsc())

    def den(u, A):
        return float(np.dot(m, np.abs(u - A) ** p)) + w_dir * abs(A) ** p

    def den_grad(u, A):
        d = u - A
        return p * m * np.abs(d) ** (p - 2.0) * d

    def logq(u, A):
        return np.log(prob.energy(u, p)) - np.log(den(u, A))

    def on_shell(u):
        return u * (delta / prob.mass(u, p)) ** (1.0 / p)

    out = []
    for A in A_grid:
        A = float(A)
        if A == 0.0:
            out.append((A, base.lam))
            continue
        u = on_shell(np.sign(A) * phi_star)
        f = logq(u, A)
        for _ in range(maxiter):
            gq = prob.energy_grad(u, p) / prob.energy(u, p) - den_grad(u, A) / den(u, A)
            gn = prob.mass_grad(u, p)
            d = -lu.solve(gq)
            # project the step onto the tangent space of the shell
            dn = lu.solve(gn)
            d -= dn * (np.dot(gn, d) / np.dot(gn, dn))
            slope = float(np.dot(gq, d))
            if slope >= -1e-30:
                break
            t, improved = 1.0, False
            while t > 1e-12:
                v = on_shell(u + t * d)
                fv = logq(v, A)
                if fv <= f + 1e-4 * t * slope:
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
            df = f - fv
            u, f = v, fv
            if df <= tol:
                break
        val = float(np.exp(f / p))
        out.append((A, min(val, base.lam)))
    return out


def lambda_radial_profile(qc_map, a, radii, mesh_level: int, tube_radius: float, p=None,
                          k: int = 1, tol: float = 1e-8, seed=0, keep_point=None,
                          diagnostics_path=None, boundary: str = "snap"):
    """Tabulate lambda(Sigma(a, tau)) over a grid of radii.

    ``tube_radius`` is relative: the trace tube on ``S(a, tau)`` has Euclidean
    radius ``tube_radius * tau``, so concentric spheres see the same angular
    thickening.  Radii whose sphere misses the quasiplane give rows flagged
    ``no boundary`` with ``lam = nan``.
    """
    from .distortion import ProfileRow, RadialProfile

    a = np.asarray(a, dtype=float)
    n = qc_map.dim
    p = float(n if p is None else p)
    fa = qc_map.eval(a)
    if np.max(np.abs(fa[k:])) > 1e-9:
        raise ValueError(f"center {a.tolist()} is not on the quasiplane (|f_perp(a)| = {np.abs(fa[k:]).max():.3g})")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and strictly increasing")

    base = build_sphere_mesh(Sphere(a, 1.0), mesh_level)
    rows = []
    for tau in radii:
        mesh = base.scaled(float(tau))
        kp = None if keep_point is None else a + tau * (np.asarray(keep_point) - a) / np.linalg.norm(np.asarray(keep_point) - a)
        marked = mark_quasiplane_trace(mesh, qc_map, k, tube_radius * tau, keep_point=kp,
                                       boundary=boundary)
        if marked.trace_empty:
            log.warning("sphere of radius %g misses the quasiplane; row excluded", tau)
            rows.append(ProfileRow(float(tau), lam=float("nan"), flags=("no boundary, lambda undefined",)))
            continue
        est = estimate_lambda(marked, p, tol=tol, seed=seed, tube_radius=tube_radius)
        flags = () if est.trusted else ("untrusted",)
        rows.append(ProfileRow(float(tau), lam=est.lam, flags=flags, solver=est.diagnostics()))
        if diagnostics_path is not None:
            with open(diagnostics_path, "a") as fh:
                fh.write(json.dumps({"tau": float(tau), **est.diagnostics()}) + "\n")
    return RadialProfile(rows)

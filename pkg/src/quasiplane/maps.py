"""Explicit quasiconformal self-maps of R^n with analytic Jacobians.

All callables are vectorised: ``eval`` maps ``(..., n)`` to ``(..., n)`` and
``jacobian`` maps ``(..., n)`` to ``(..., n, n)`` with rows ``grad f_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class QCMapSpec:
    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    inverse_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None
    declared_KO: Optional[float] = None
    declared_KI: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in (self.declared_KO, self.declared_KI):
            if k is not None and k < 1:
                raise ValueError("declared dilatations must be >= 1")

    @property
    def declared_K(self) -> Optional[float]:
        if self.declared_KO is None or self.declared_KI is None:
            return None
        return max(self.declared_KO, self.declared_KI)

    def det(self, x) -> np.ndarray:
        return np.linalg.det(self.jacobian(x))


@dataclass(frozen=True)
class DilatationEstimate:
    KO_est: float
    KI_est: float
    sample_count: int
    domain: str

    @property
    def K_est(self) -> float:
        return max(self.KO_est, self.KI_est)


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"expected points in R^{n}, got trailing shape {x.shape[-1]}")
    return x


def identity_map(n: int) -> QCMapSpec:
    if n < 2:
        raise ValueError("n must be >= 2")

    def jac(x):
        x = _as_points(x, n)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    return QCMapSpec("identity", n, lambda x: _as_points(x, n).copy(), jac,
                     inverse_eval=lambda y: _as_points(y, n).copy(),
                     declared_KO=1.0, declared_KI=1.0, params={"n": n})


def radial_stretch(n: int, alpha: float) -> QCMapSpec:
    """``x -> |x|^(alpha-1) x``; radial gain ``alpha``, tangential gain 1 (relative)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    alpha = float(alpha)

    def ev(x, a=alpha):
        x = _as_points(x, n)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, r ** (a - 1.0), 0.0)
        return s * x

    def jac(x):
        x = _as_points(x, n)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(r > 0, x / r, 0.0)
            s = (r ** (alpha - 1.0))[..., None]
        return s * (np.eye(n) + (alpha - 1.0) * u[..., :, None] * u[..., None, :])

    ko = max(alpha, 1.0) ** n / alpha
    ki = alpha / min(alpha, 1.0) ** n
    return QCMapSpec("radial_stretch", n, ev, jac,
                     inverse_eval=lambda y: ev(y, 1.0 / alpha),
                     declared_KO=ko, declared_KI=ki, params={"n": n, "alpha": alpha})


def linear_map(A) -> QCMapSpec:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    n = A.shape[0]
    d = np.linalg.det(A)
    if not d > 0:
        raise ValueError("A must have positive determinant")
    s = np.linalg.svd(A, compute_uv=False)
    Ainv = np.linalg.inv(A)
    A.setflags(write=False)

    def jac(x):
        x = _as_points(x, n)
        return np.broadcast_to(A, x.shape[:-1] + (n, n)).copy()

    return QCMapSpec("linear", n, lambda x: _as_points(x, n) @ A.T, jac,
                     inverse_eval=lambda y: _as_points(y, n) @ Ainv.T,
                     declared_KO=max(1.0, s[0] ** n / d), declared_KI=max(1.0, d / s[-1] ** n),
                     params={"A": A.tolist()})


def shear_bump_map(n: int, c: float, x0, s: float, newton_tol: float = 1e-14) -> QCMapSpec:
    """``x -> x + psi(x) e_n`` with a Gaussian bump ``psi = c exp(-|x - x0|^2 / s^2)``.

    The map is a homeomorphism as long as ``sup |grad psi| = |c| sqrt(2/e) / s < 1``;
    then ``d/dx_n (x_n + psi) > 0`` along every vertical line.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != n:
        raise ValueError("x0 must have n coordinates")
    if not s > 0:
        raise ValueError("width s must be positive")
    grad_sup = abs(c) * math.sqrt(2.0 / math.e) / s
    if grad_sup >= 1.0:
        raise ValueError(f"homeomorphism condition violated: sup|grad psi| = {grad_sup:.4g} >= 1")

    def psi_grad(x):
        d = x - x0
        g = c * np.exp(-np.sum(d * d, axis=-1) / s ** 2)
        return g, (-2.0 / s ** 2) * g[..., None] * d

    def ev(x):
        x = _as_points(x, n)
        g, _ = psi_grad(x)
        y = x.copy()
        y[..., -1] += g
        return y

    def jac(x):
        x = _as_points(x, n)
        _, dg = psi_grad(x)
        m = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()
        m[..., -1, :] += dg
        return m

    def inv(y):
        # x_n solves x_n + psi(y', x_n) = y_n; monotone in x_n, Newton from x_n = y_n
        y = _as_points(y, n)
        x = y.copy()
        for _ in range(100):
            g, dg = psi_grad(x)
            r = x[..., -1] + g - y[..., -1]
            x[..., -1] -= r / (1.0 + dg[..., -1])
            if np.all(np.abs(r) <= newton_tol * (1.0 + np.abs(y[..., -1]))):
                break
        return x

    return QCMapSpec("shear_bump", n, ev, jac, inverse_eval=inv,
                     params={"n": n, "c": float(c), "x0": x0.tolist(), "s": float(s)})


def compose(f: QCMapSpec, g: QCMapSpec) -> QCMapSpec:
    """``f o g`` with the chain-rule Jacobian; declared dilatations are dropped."""
    if f.dim != g.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {g.dim}")
    inv = None
    if f.inverse_eval is not None and g.inverse_eval is not None:
        inv = lambda y: g.inverse_eval(f.inverse_eval(y))  # noqa: E731
    return QCMapSpec(f"{f.name}o{g.name}", f.dim,
                     lambda x: f.eval(g.eval(x)),
                     lambda x: f.jacobian(g.eval(x)) @ g.jacobian(x),
                     inverse_eval=inv,
                     params={"outer": f.name, "inner": g.name})


def inverse_map(f: QCMapSpec) -> QCMapSpec:
    """The inverse as a map in its own right; ``(f^-1)'(y) = f'(f^-1(y))^-1``."""
    if f.inverse_eval is None:
        raise ValueError(f"map {f.name!r} has no inverse")
    return QCMapSpec(f"{f.name}^-1", f.dim, f.inverse_eval,
                     lambda y: np.linalg.inv(f.jacobian(f.inverse_eval(y))),
                     inverse_eval=f.eval,
                     declared_KO=f.declared_KI, declared_KI=f.declared_KO,
                     params={"inverse_of": f.name})


def singular_values(M) -> np.ndarray:
    """Singular values (descending) from the symmetric eigenproblem of ``M^T M``."""
    M = np.asarray(M, dtype=float)
    w = np.linalg.eigvalsh(np.swapaxes(M, -1, -2) @ M)
    return np.sqrt(np.clip(w[..., ::-1], 0.0, None))


def operator_norm(M) -> np.ndarray:
    return singular_values(M)[..., 0]


def min_stretch(M) -> np.ndarray:
    return singular_values(M)[..., -1]


def sample_ball(center, radius, count, seed, dim=None, exclude_center=0.0):
    """Uniform points in ``B(center, radius)``; prefixes of the stream are nested.

    Drawing ``dim + 2`` normals per point and keeping the first ``dim`` after
    normalising the full vector yields the uniform ball law.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    n = dim or center.size
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((int(count), n + 2))
    x = g[:, :n] / np.linalg.norm(g, axis=1, keepdims=True)
    if exclude_center > 0:
        r = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.where(r * radius < exclude_center, x / np.maximum(r, 1e-300) * (exclude_center / radius), x)
    return center + radius * x


def estimate_dilatations(qc_map: QCMapSpec, center, radius: float, samples: int, seed=0,
                         batch: int = 200_000, exclude_center: float = 0.0) -> DilatationEstimate:
    """Sampled lower bounds of ``K_O`` and ``K_I`` over a ball.

    ``K_O`` is the max of ``||f'||^n / J`` and ``K_I`` the max of ``J / l(f')^n``
    over uniformly drawn points.  Raises when ``J <= 0`` at any sample.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not radius > 0:
        raise ValueError("sampling region must have positive volume")
    n = qc_map.dim
    pts = sample_ball(center, radius, samples, seed, dim=n, exclude_center=exclude_center)
    ko, ki = 1.0, 1.0
    for start in range(0, samples, batch):
        x = pts[start:start + batch]
        M = qc_map.jacobian(x)
        J = np.linalg.det(M)
        if np.any(~(J > 0)):
            bad = x[np.argmax(~(J > 0))]
            raise ValueError(f"map {qc_map.name!r} is not orientation preserving at {bad.tolist()}")
        sv = singular_values(M)
        ko = max(ko, float(np.max(sv[:, 0] ** n / J)))
        ki = max(ki, float(np.max(J / sv[:, -1] ** n)))
    c = np.asarray(center, dtype=float).reshape(-1)
    return DilatationEstimate(ko, ki, int(samples), f"B({c.tolist()}, {radius})")

"""Pointwise linear-algebra estimates behind the variational inequality.

For a Jacobian value ``M`` (rows ``df_1, ..., df_n``) the checks cover

* the Hadamard / AM-GM bound on the wedge of all rows but one,
* ``|df_i|^2 + sum_{s != i} <df_s, df_i>^2 / |df_i|^2 <= ||M||^2``,
* ``phi^(n / (2(n-1))) <= c1(n, k) ||M||^n`` with
  ``phi = sum_{i > k} |df_1 ^ ... ^ (df_i omitted) ^ ... ^ df_n|^2``,
* the power-mean inequality and the ``l^2`` vs ``l^n`` reduction with ``c2``.

Row indices ``i`` are 1-based, as in ``f = (f_1, ..., f_n)``.  Every check
returns a *relative* slack ``(rhs - lhs) / max(rhs, tiny)``; nonnegative means
the inequality holds.  The ``*_slacks`` functions are batched versions over a
stack of matrices for property runs.
"""

from __future__ import annotations

import numpy as np

TINY = 1e-300


def constants(n: int, k: int):
    """``(c1, c2, c3)`` for ``1 <= k <= n - 2``."""
    if not 1 <= k <= n - 2:
        raise ValueError(f"need 1 <= k <= n-2, got n={n}, k={k}")
    m = n - k
    c1 = m ** (n / (2.0 * (n - 1)))
    c2 = m ** ((n - 2) / (2.0 * n))
    c3 = m ** (n / 2.0)
    return c1, c2, c3


def spectral_norm(M):
    """Operator norm via the eigenvalues of ``M^T M`` (works on stacks)."""
    M = np.asarray(M, dtype=float)
    w = np.linalg.eigvalsh(np.swapaxes(M, -1, -2) @ M)
    return np.sqrt(np.maximum(w[..., -1], 0.0))


def _minor_norms(M):
    """``(..., n)`` array: norm of the wedge of all rows except row i."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    out = np.empty(M.shape[:-2] + (n,))
    for i in range(n):
        G = np.delete(M, i, axis=-2)
        out[..., i] = np.sqrt(np.maximum(np.linalg.det(G @ np.swapaxes(G, -1, -2)), 0.0))
    return out


def wedge_minor_norm(M, i: int) -> float:
    """Norm of ``df_1 ^ ... ^ (df_i omitted) ^ ... ^ df_n``, ``sqrt(det(G G^T))``."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if not 1 <= i <= n:
        raise ValueError(f"row index must be in 1..{n}, got {i}")
    G = np.delete(M, i - 1, axis=0)
    return float(np.sqrt(max(np.linalg.det(G @ G.T), 0.0)))


def _rel(lhs, rhs):
    return (rhs - lhs) / np.maximum(np.abs(rhs), TINY)


def _unit_scale(x, ndim):
    """Divide each trailing ``ndim``-block by its largest entry in magnitude.

    Every inequality here is homogeneous, so relative slacks are unchanged,
    while powers like ``|v|^n`` no longer underflow for tiny inputs.
    """
    x = np.asarray(x, dtype=float)
    axes = tuple(range(-ndim, 0))
    s = np.max(np.abs(x), axis=axes, keepdims=True) if x.size else np.ones_like(x)
    return x / np.where(s > 0, s, 1.0)


def hadamard_wedge_slacks(M):
    """Slacks ``(..., n, 2)``: AM-GM form and ``|wedge| <= ||M||^(n-1)``, per omitted row."""
    M = _unit_scale(M, 2)
    n = M.shape[-1]
    w = _minor_norms(M)
    sq = np.sum(M * M, axis=-1)
    # sum over j != i directly: total - sq[i] cancels when one row dominates
    mean_others = np.sum(sq[..., None, :] * (1.0 - np.eye(n)), axis=-1) / (n - 1)
    s1 = _rel(w ** (2.0 / (n - 1)), mean_others)
    s2 = _rel(w, spectral_norm(M)[..., None] ** (n - 1))
    return np.stack([s1, s2], axis=-1)


def check_hadamard_wedge(M, i: int):
    """Both wedge bounds for omitted row ``i``; returns ``(ok, (slack_amgm, slack_norm))``."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if not 1 <= i <= n:
        raise ValueError(f"row index must be in 1..{n}, got {i}")
    s = hadamard_wedge_slacks(M)[i - 1]
    return bool(np.all(s >= -1e-9)), (float(s[0]), float(s[1]))


def row_gradient_slacks(M):
    """Slacks ``(..., n)`` of the projected row bound; NaN where a row vanishes."""
    M = _unit_scale(M, 2)
    sq = np.sum(M * M, axis=-1)
    gram = M @ np.swapaxes(M, -1, -2)
    n = M.shape[-1]
    cross = np.sum(gram ** 2 * (1.0 - np.eye(n)), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lhs = np.where(sq > 0, sq + cross / np.where(sq > 0, sq, 1.0), np.nan)
    nm = spectral_norm(M)[..., None] ** 2
    return _rel(lhs, nm)


def check_row_gradient_bound(M, i: int, rng=None, directions: int = 32):
    """Row-``i`` bound plus ``|<df_i, h>| <= ||M||`` for random unit ``h``.

    A zero row (after scaling M to unit max entry, one whose squared norm
    underflows) is skipped: returns ``(True, None)``.
    """
    M = _unit_scale(M, 2)
    n = M.shape[0]
    if not 1 <= i <= n:
        raise ValueError(f"row index must be in 1..{n}, got {i}")
    row = M[i - 1]
    if not np.dot(row, row) > 0:
        return True, None
    s_main = float(row_gradient_slacks(M)[i - 1])
    rng = np.random.default_rng(0) if rng is None else rng
    h = rng.standard_normal((directions, n))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    s_dir = float(np.min(_rel(np.abs(h @ row), spectral_norm(M))))
    slack = min(s_main, s_dir)
    return slack >= -1e-9, slack


def phi_value(M, k: int):
    w = _minor_norms(M)
    return np.sum(w[..., k:] ** 2, axis=-1)


def phi_bound_slacks(M, k: int):
    M = _unit_scale(M, 2)
    n = M.shape[-1]
    c1, _, _ = constants(n, k)
    lhs = phi_value(M, k) ** (n / (2.0 * (n - 1)))
    return _rel(lhs, c1 * spectral_norm(M) ** n)


def check_phi_bound(M, k: int):
    M = np.asarray(M, dtype=float)
    s = float(phi_bound_slacks(M, k))
    if not np.any(M):
        s = 0.0  # 0 <= 0
    return s >= -1e-9, s


def power_mean(values, t: float, axis=-1):
    a = np.abs(np.asarray(values, dtype=float))
    s = np.max(a, axis=axis, keepdims=True)
    s = np.where(s > 0, s, 1.0)
    return np.mean((a / s) ** t, axis=axis) ** (1.0 / t) * np.squeeze(s, axis=axis)


def power_mean_slacks(values, t1, t2):
    v = _unit_scale(values, 1)
    return _rel(power_mean(v, t1), power_mean(v, t2))


def check_power_mean(values, t1: float, t2: float):
    if not (1 <= t1 <= t2):
        raise ValueError("need 1 <= t1 <= t2")
    v = np.asarray(values, dtype=float)
    s = float(power_mean_slacks(v, t1, t2)) if np.any(v) else 0.0
    return s >= -1e-9, s


def vector_norm_slacks(values, n: int, k: int):
    _, c2, _ = constants(n, k)
    v = np.abs(_unit_scale(values, 1))
    lhs = np.sqrt(np.sum(v ** 2, axis=-1))
    rhs = c2 * np.sum(v ** n, axis=-1) ** (1.0 / n)
    return _rel(lhs, rhs)


def check_vector_norm_reduction(values, n: int, k: int):
    """``(sum v_i^2)^(1/2) <= c2(n,k) (sum |v_i|^n)^(1/n)`` for ``n - k`` values."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] != n - k:
        raise ValueError(f"expected {n - k} values, got {v.shape[-1]}")
    s = float(vector_norm_slacks(v, n, k)) if np.any(v) else 0.0
    return s >= -1e-9, s


def tangential_sum_slacks(M, normals, k: int):
    """``sum_{i > k} |P df_i|^n <= (n - k) ||M||^n`` with ``P`` the tangent projector."""
    M = _unit_scale(M, 2)
    nu = np.asarray(normals, dtype=float)
    nu = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
    n = M.shape[-1]
    rows = M[..., k:, :]
    proj = rows - np.sum(rows * nu[..., None, :], axis=-1, keepdims=True) * nu[..., None, :]
    lhs = np.sum(np.linalg.norm(proj, axis=-1) ** n, axis=-1)
    return _rel(lhs, (n - k) * spectral_norm(M) ** n)


# --------------------------------------------------------------------------
# random families and the property suite

FAMILIES = ("gaussian", "orthogonal", "rank_deficient", "ill_conditioned")
DEFAULT_CASES = ((3, 1), (4, 1), (4, 2), (5, 2), (5, 3))


def random_matrices(rng, n: int, count: int, family: str = "gaussian"):
    if family == "gaussian":
        return rng.standard_normal((count, n, n))
    Q1, R1 = np.linalg.qr(rng.standard_normal((count, n, n)))
    Q1 = Q1 * np.sign(np.diagonal(R1, axis1=-2, axis2=-1))[:, None, :]
    if family == "orthogonal":
        return Q1
    Q2, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
    if family == "rank_deficient":
        s = rng.random((count, n)) + 0.1
        s[np.arange(count), rng.integers(0, n, count)] = 0.0
    elif family == "ill_conditioned":
        s = np.logspace(0.0, -8.0, n)[None, :] * np.ones((count, 1))
        s = rng.permuted(s, axis=1)
    else:
        raise ValueError(f"unknown family {family!r}")
    return (Q1 * s[:, None, :]) @ np.swapaxes(Q2, -1, -2)


def _family_counts(trials):
    base = trials // 10
    return {"gaussian": trials - 3 * base, "orthogonal": base,
            "rank_deficient": base, "ill_conditioned": base}


def run_property_suite(trials: int = 100_000, seed=0, cases=DEFAULT_CASES, tol: float = 1e-9,
                       chunk: int = 25_000):
    """Run all five checks on ``trials`` random inputs per ``(n, k)``.

    Returns a list of dicts, one per ``(n, k, check)``, with the violation count
    and the smallest slack seen.  The streams are split per case so every
    ``(n, k)`` is reproducible on its own.
    """
    out = []
    seeds = np.random.SeedSequence(seed).spawn(len(cases))
    for (n, k), ss in zip(cases, seeds):
        rng = np.random.default_rng(ss)
        acc = {name: [0, np.inf, 0] for name in
               ("hadamard_wedge", "row_gradient", "phi_bound", "power_mean", "vector_norm")}

        def tally(name, s):
            s = s[np.isfinite(s)]
            a = acc[name]
            a[0] += int(np.sum(s < -tol))
            a[1] = min(a[1], float(s.min()) if s.size else np.inf)
            a[2] += s.size

        for fam, cnt in _family_counts(trials).items():
            for start in range(0, cnt, chunk):
                m = min(chunk, cnt - start)
                M = random_matrices(rng, n, m, fam)
                tally("hadamard_wedge", hadamard_wedge_slacks(M).reshape(-1))
                tally("row_gradient", row_gradient_slacks(M).reshape(-1))
                tally("phi_bound", phi_bound_slacks(M, k))
        for start in range(0, trials, chunk):
            m = min(chunk, trials - start)
            N = int(rng.integers(1, 9))
            vals = rng.standard_normal((m, N)) * rng.exponential(1.0, (m, 1))
            t1 = 1.0 + 5.0 * rng.random(m)
            t2 = t1 + (6.0 - t1) * rng.random(m)
            a = np.abs(_unit_scale(vals, 1))
            pm1 = np.mean(a ** t1[:, None], axis=1) ** (1.0 / t1)
            pm2 = np.mean(a ** t2[:, None], axis=1) ** (1.0 / t2)
            tally("power_mean", _rel(pm1, pm2))
            v = rng.standard_normal((m, n - k)) * rng.exponential(1.0, (m, 1))
            tally("vector_norm", vector_norm_slacks(v, n, k))
        for name, (viol, mn, cnt) in acc.items():
            out.append({"n": n, "k": k, "check": name, "evaluations": cnt,
                        "violations": viol, "min_slack": mn})
    return out

"""Sphere meshes, P1 surface gradients and p-norm quadrature.

Every geometric experiment in the package runs on a triangulated sphere
``S(a, r)`` in R^3.  Vertices carry a Dirichlet flag; flagged vertices
represent the (thickened) trace of a quasiplane on the sphere and pin the
admissible test functions to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

MAX_LEVEL = 8


class EmptyFreeRegionError(ValueError):
    """Dirichlet marking left no free vertex on the sphere."""


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangulated subdomain of a sphere with Dirichlet-marked vertices.

    Instances are immutable; the derived geometric operators are computed
    lazily and cached.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    dirichlet_mask: np.ndarray
    center: np.ndarray
    radius: float
    level: int = 0
    trace_empty: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "triangles", _frozen(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "dirichlet_mask", _frozen(np.asarray(self.dirichlet_mask, dtype=bool)))
        object.__setattr__(self, "center", _frozen(np.asarray(self.center, dtype=float)))
        object.__setattr__(self, "radius", float(self.radius))
        if self.dirichlet_mask.shape != (len(self.vertices),):
            raise ValueError("dirichlet_mask must have one entry per vertex")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def sphere(self) -> Sphere:
        return Sphere(self.center, self.radius)

    @property
    def free(self) -> np.ndarray:
        return ~self.dirichlet_mask

    def with_mask(self, mask, trace_empty: bool = False) -> "SurfaceMesh":
        return replace(self, dirichlet_mask=np.asarray(mask, dtype=bool), trace_empty=trace_empty)

    def scaled(self, radius: float) -> "SurfaceMesh":
        """Same combinatorics and mask on the concentric sphere of another radius."""
        v = self.center + (self.vertices - self.center) * (radius / self.radius)
        return replace(self, vertices=v, radius=radius)

    @cached_property
    def _frames(self):
        p = self.vertices[self.triangles]
        e0 = p[:, 2] - p[:, 1]  # opposite vertex 0
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        cr = np.cross(e2, -e1)
        dbl = np.linalg.norm(cr, axis=1)
        return p, (e0, e1, e2), cr, dbl

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self._frames[3]

    @cached_property
    def normals(self) -> np.ndarray:
        _, _, cr, dbl = self._frames
        with np.errstate(invalid="ignore", divide="ignore"):
            return cr / dbl[:, None]

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def vertex_weights(self) -> np.ndarray:
        """Lumped (one third of incident triangle area) vertex weights."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse ``(3 M, N)`` map from nodal values to stacked per-triangle gradients."""
        _, edges, cr, dbl = self._frames
        if np.any(dbl <= 1e-300):
            raise ValueError("mesh contains a degenerate (zero-area) triangle")
        nrm = cr / dbl[:, None]
        m = self.n_triangles
        rows, cols, vals = [], [], []
        for i, e in enumerate(edges):
            g = np.cross(nrm, e) / dbl[:, None]
            for d in range(3):
                rows.append(3 * np.arange(m) + d)
                cols.append(self.triangles[:, i])
                vals.append(g[:, d])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(3 * m, self.n_vertices))

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        n = self.n_vertices
        a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def free_components(self, mask=None):
        """Label the edge-connected components of the unmasked vertices (-1 on masked)."""
        mask = self.dirichlet_mask if mask is None else np.asarray(mask, dtype=bool)
        keep = np.flatnonzero(~mask)
        labels = np.full(self.n_vertices, -1)
        if keep.size == 0:
            return 0, labels
        sub = self.adjacency[keep][:, keep]
        ncomp, lab = connected_components(sub, directed=False)
        labels[keep] = lab
        return ncomp, labels


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(v, f):
    # one new vertex per unique edge, four children per triangle
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e_sorted = np.sort(e, axis=1)
    uniq, inv = np.unique(e_sorted, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    m = len(f)
    ids = len(v) + inv
    a, b, c = ids[:m], ids[m:2 * m], ids[2 * m:]
    f0, f1, f2 = f[:, 0], f[:, 1], f[:, 2]
    nf = np.concatenate([
        np.stack([f0, a, c], 1),
        np.stack([f1, b, a], 1),
        np.stack([f2, c, b], 1),
        np.stack([a, b, c], 1),
    ])
    return np.vstack([v, mid]), nf


def build_sphere_mesh(sphere: Sphere, level: int) -> SurfaceMesh:
    """Icosphere on ``sphere`` after ``level`` rounds of 1-to-4 subdivision.

    The mesh has ``10 * 4**level + 2`` vertices, outward-oriented triangles
    and an empty Dirichlet mask.
    """
    if sphere.dim != 3:
        raise ValueError("sphere meshes are only built in R^3")
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= MAX_LEVEL):
        raise ValueError(f"level must be an integer in [0, {MAX_LEVEL}], got {level!r}")
    v, f = _icosahedron()
    for _ in range(int(level)):
        v, f = _subdivide(v, f)
    p = v[f]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", nrm, p.mean(axis=1)) < 0
    f[flip] = f[flip][:, [0, 2, 1]]
    verts = sphere.center + sphere.radius * v
    return SurfaceMesh(verts, f, np.zeros(len(v), dtype=bool), sphere.center, sphere.radius, int(level))


def _trace_steps(qc_map, x, k):
    # Gauss-Newton displacement towards f^{-1}(Pi^k_0)
    y = qc_map.eval(x)[:, k:]
    jac = qc_map.jacobian(x)[:, k:, :]
    return -(np.linalg.pinv(jac) @ y[:, :, None])[:, :, 0]


def trace_distance(mesh: SurfaceMesh, qc_map, k: int) -> np.ndarray:
    """First-order distance from each vertex to the quasiplane ``f^{-1}(Pi^k_0)``.

    Uses the Gauss-Newton step ``|B^+ f_perp(x)|`` where ``f_perp`` are the last
    ``n - k`` coordinates of ``f`` and ``B`` the matching rows of ``f'(x)``.
    """
    return np.linalg.norm(_trace_steps(qc_map, np.asarray(mesh.vertices), k), axis=1)


def _on_sphere(mesh, x):
    d = x - mesh.center
    return mesh.center + mesh.radius * d / np.linalg.norm(d, axis=1, keepdims=True)


def _snap_to_level_set(mesh: SurfaceMesh, level, mover, min_area_ratio: float = 0.1):
    """Move vertices onto the zero set of ``level`` so the mesh fits the boundary.

    For every edge with a sign change of ``level`` the endpoint nearer the zero
    set is moved there by ``mover(indices) -> positions`` (NaN rows are
    rejected).  Moves that would flip a triangle or shrink it below
    ``min_area_ratio`` of its original area are undone, farthest move first.
    Returns the new vertex array and the snapped-vertex mask.
    """
    e = mesh.edges
    cut = (level[e[:, 0]] < 0) != (level[e[:, 1]] < 0)
    ce = e[cut]
    near = np.where(np.abs(level[ce[:, 0]]) <= np.abs(level[ce[:, 1]]), ce[:, 0], ce[:, 1])
    cand = np.unique(near)
    snapped = np.zeros(mesh.n_vertices, dtype=bool)
    v = np.array(mesh.vertices)
    if cand.size == 0:
        return v, snapped
    target = mover(cand)
    ok = np.all(np.isfinite(target), axis=1)
    cand, target = cand[ok], target[ok]
    slot = np.full(mesh.n_vertices, -1)
    slot[cand] = np.arange(cand.size)
    active = np.ones(cand.size, dtype=bool)
    tri = mesh.triangles
    area0 = mesh.areas
    while True:
        w = v.copy()
        w[cand[active]] = target[active]
        q = w[tri]
        nrm = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
        area = 0.5 * np.linalg.norm(nrm, axis=1)
        outward = np.einsum("ij,ij->i", nrm, q.mean(axis=1) - mesh.center) > 0
        bad = np.flatnonzero((area < min_area_ratio * area0) | ~outward)
        if bad.size == 0:
            break
        for t in bad:
            idx = [slot[i] for i in tri[t] if slot[i] >= 0 and active[slot[i]]]
            if idx:
                active[max(idx, key=lambda j: abs(level[cand[j]]))] = False
    snapped[cand[active]] = True
    return w, snapped


def _select_component(mesh, mask, keep_point):
    ncomp, labels = mesh.free_components(mask)
    if ncomp <= 1:
        return mask
    free_idx = np.flatnonzero(~mask)
    if keep_point is None:
        # farthest free vertex from the marked set, chunked to bound memory
        marked = mesh.vertices[mask]
        best, best_d = free_idx[0], -1.0
        for start in range(0, free_idx.size, 4096):
            chunk = free_idx[start:start + 4096]
            d = np.min(np.linalg.norm(mesh.vertices[chunk, None, :] - marked[None], axis=2), axis=1)
            j = int(np.argmax(d))
            if d[j] > best_d:
                best, best_d = chunk[j], d[j]
        keep_vertex = best
    else:
        kp = np.asarray(keep_point, dtype=float)
        keep_vertex = free_idx[np.argmin(np.linalg.norm(mesh.vertices[free_idx] - kp, axis=1))]
    return mask | (labels != labels[keep_vertex])


BOUNDARY_MODES = ("snap", "offset")


def mark_quasiplane_trace(mesh: SurfaceMesh, qc_map, k: int, tube_radius: float,
                          keep_point=None, boundary: str = "snap",
                          edge_offset: float = 0.5) -> SurfaceMesh:
    """Mark every vertex within ``tube_radius`` of the quasiplane as Dirichlet.

    ``boundary="snap"`` (default) moves the vertices nearest the tube surface
    onto it, so the discrete boundary is a polygon inscribed in the true one.
    ``boundary="offset"`` keeps the mesh and widens the threshold by
    ``edge_offset`` mean edge lengths instead; that is first order in the mesh
    size.  A tube thinner than the mesh falls back to the offset rule.

    When the free region splits, only the component containing ``keep_point``
    survives (default: the free vertex farthest from the marked set).  A sphere
    that misses the quasiplane comes back unmarked with ``trace_empty=True``.
    """
    n = mesh.vertices.shape[1]
    if qc_map.dim != n:
        raise ValueError(f"map dimension {qc_map.dim} does not match mesh dimension {n}")
    if not 1 <= k <= n - 2:
        raise ValueError(f"k must satisfy 1 <= k <= n-2, got k={k}, n={n}")
    if not tube_radius > 0:
        raise ValueError("tube_radius must be positive")
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")

    dist = trace_distance(mesh, qc_map, k)
    level = dist - tube_radius
    h = mesh.mean_edge_length
    if boundary == "snap" and np.any(level < 0):

        def mover(idx):
            x = np.array(mesh.vertices[idx])
            live = np.ones(len(x), dtype=bool)
            resid = np.full(len(x), np.inf)
            for it in range(9):
                step = _trace_steps(qc_map, x[live], k)
                d = np.linalg.norm(step, axis=1)
                resid[live] = np.abs(d - tube_radius)
                if it == 8:
                    break
                moving = d > 0  # a vertex on the quasiplane has no direction to move
                live[live] = moving
                step, d = step[moving], d[moving, None]
                x[live] = _on_sphere(mesh, x[live] + (d - tube_radius) * step / d)
            x[~(resid <= 1e-6 * h) | ~live] = np.nan
            return x

        verts, snapped = _snap_to_level_set(mesh, level, mover)
        mesh = replace(mesh, vertices=verts)
        mask = (level < 0) | snapped
    else:
        mask = dist <= tube_radius + edge_offset * h
    if not mask.any():
        return mesh.with_mask(mask, trace_empty=True)
    if mask.all():
        raise EmptyFreeRegionError("tube covers every vertex; decrease tube_radius")
    mask = _select_component(mesh, mask, keep_point)
    if mask.all():
        raise EmptyFreeRegionError("free region is empty after component selection")
    return mesh.with_mask(mask)


def mark_cap_complement(mesh: SurfaceMesh, pole, theta: float, boundary: str = "snap",
                        edge_offset: float = 0.5) -> SurfaceMesh:
    """Keep the geodesic cap of angular radius ``theta`` around ``pole``; mark the rest.

    Same boundary modes as :func:`mark_quasiplane_trace`; snapping rotates
    vertices along great circles through the pole.
    """
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")
    u = (mesh.vertices - mesh.center) / mesh.radius
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    ang = np.arccos(np.clip(u @ pole, -1.0, 1.0))
    if boundary == "snap":

        def mover(idx):
            t = u[idx] - np.outer(u[idx] @ pole, pole)
            with np.errstate(invalid="ignore", divide="ignore"):
                t /= np.linalg.norm(t, axis=1, keepdims=True)
            return mesh.center + mesh.radius * (np.cos(theta) * pole + np.sin(theta) * t)

        verts, snapped = _snap_to_level_set(mesh, theta - ang, mover)
        mesh = replace(mesh, vertices=verts)
        mask = (ang > theta) | snapped
    else:
        h = mesh.mean_edge_length / mesh.radius
        mask = ang >= theta - edge_offset * h
    if mask.all():
        raise EmptyFreeRegionError("cap contains no vertex")
    return mesh.with_mask(mask)


def surface_gradient(mesh: SurfaceMesh, field) -> np.ndarray:
    """Per-triangle gradient ``(M, 3)`` of the P1 interpolant of ``field``."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_vertices,):
        raise ValueError("field must have one value per vertex")
    return (mesh.gradient_operator @ field).reshape(-1, 3)


def integrate_p_norm(mesh: SurfaceMesh, per_triangle_values, p: float) -> float:
    """One-point quadrature of ``|v|^p`` over the mesh.

    ``per_triangle_values`` holds a scalar or a vector per triangle; vectors are
    reduced to their Euclidean norm.  Returns the integral, not its p-th root.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = np.asarray(per_triangle_values, dtype=float)
    if v.ndim == 2:
        v = np.linalg.norm(v, axis=1)
    if v.shape != (mesh.n_triangles,):
        raise ValueError("need one value per triangle")
    return float(np.sum(mesh.areas * np.abs(v) ** p))


def vertex_p_norm(mesh: SurfaceMesh, field, p: float) -> float:
    """Integral of ``|phi|^p`` for a nodal field using the three-vertex rule per triangle."""
    field = np.asarray(field, dtype=float)
    return float(np.dot(mesh.vertex_weights, np.abs(field) ** p))


def save_mesh(mesh: SurfaceMesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    for v, d in zip(mesh.vertices, mesh.dirichlet_mask):
        lines.append(" ".join(repr(float(x)) for x in v) + f" {int(d)}")
    for t in mesh.triangles:
        lines.append(f"{t[0]} {t[1]} {t[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, center=(0.0, 0.0, 0.0), level: int = 0) -> SurfaceMesh:
    """Read the plain-text mesh format written by :func:`save_mesh`.

    The file stores no sphere metadata; the radius is recovered as the mean
    vertex distance from ``center``.
    """
    with open(path) as fh:
        nv, nt = (int(s) for s in fh.readline().split())
        vrows = [fh.readline().split() for _ in range(nv)]
        trows = [fh.readline().split() for _ in range(nt)]
    va = np.array(vrows, dtype=float)
    tri = np.array(trows, dtype=np.int64).reshape(nt, 3)
    c = np.asarray(center, dtype=float)
    radius = float(np.linalg.norm(va[:, :3] - c, axis=1).mean())
    return SurfaceMesh(va[:, :3], tri, va[:, 3] != 0, c, radius, level)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from quasiplane.geometry import (
    EmptyFreeRegionError,
    Sphere,
    SurfaceMesh,
    build_sphere_mesh,
    integrate_p_norm,
    load_mesh,
    mark_cap_complement,
    mark_quasiplane_trace,
    save_mesh,
    surface_gradient,
    trace_distance,
    vertex_p_norm,
)
from quasiplane.maps import identity_map, radial_stretch

UNIT = Sphere(np.zeros(3), 1.0)


@pytest.fixture(scope="module")
def meshes():
    return {L: build_sphere_mesh(UNIT, L) for L in range(6)}


def test_icosahedron_counts(meshes):
    m = meshes[0]
    assert (m.n_vertices, m.n_triangles) == (12, 20)
    assert not m.dirichlet_mask.any()


@pytest.mark.parametrize("level", range(6))
def test_vertex_count_and_euler(meshes, level):
    m = meshes[level]
    assert m.n_vertices == 10 * 4 ** level + 2
    assert m.n_vertices - len(m.edges) + m.n_triangles == 2


def test_level3_has_642_vertices(meshes):
    assert meshes[3].n_vertices == 642


def test_shifted_sphere_projection():
    m = build_sphere_mesh(Sphere([1.0, 0.0, 0.0], 2.0), 1)
    assert m.n_vertices == 42
    np.testing.assert_allclose(np.linalg.norm(m.vertices - [1, 0, 0], axis=1), 2.0, atol=2e-12)


@pytest.mark.parametrize("level", [-1, 9, 2.5])
def test_level_out_of_range(level):
    with pytest.raises(ValueError):
        build_sphere_mesh(UNIT, level)


def test_outward_orientation(meshes):
    m = meshes[3]
    p = m.vertices[m.triangles]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    assert np.all(np.einsum("ij,ij->i", nrm, p.mean(axis=1)) > 0)


def test_mesh_is_immutable(meshes):
    with pytest.raises(ValueError):
        meshes[1].vertices[0, 0] = 5.0


def test_area_converges_monotonically(meshes):
    areas = [meshes[L].areas.sum() for L in range(6)]
    assert np.all(np.diff(areas) > 0)
    err = 4 * np.pi - np.array(areas)
    assert np.all(err > 0)
    # second order: the error shrinks by about 4 per level
    ratios = err[1:-1] / err[2:]
    assert np.all((ratios > 3.5) & (ratios < 4.5))
    assert abs(integrate_p_norm(meshes[4], np.ones(meshes[4].n_triangles), 3.0) - 4 * np.pi) < 0.005 * 4 * np.pi


def test_area_scales_with_radius_squared():
    m = build_sphere_mesh(Sphere(np.zeros(3), 2.0), 4)
    assert abs(integrate_p_norm(m, np.ones(m.n_triangles), 1.0) - 16 * np.pi) < 0.005 * 16 * np.pi


def test_integrate_p_norm_zero_and_bad_p(meshes):
    m = meshes[2]
    assert integrate_p_norm(m, np.zeros(m.n_triangles), 2.0) == 0.0
    with pytest.raises(ValueError):
        integrate_p_norm(m, np.ones(m.n_triangles), 0.5)


def test_vertex_weights_partition_area(meshes):
    m = meshes[3]
    assert np.isclose(m.vertex_weights.sum(), m.areas.sum(), rtol=1e-14)
    assert np.isclose(vertex_p_norm(m, np.ones(m.n_vertices), 4.0), m.areas.sum(), rtol=1e-14)


def test_gradient_of_constant_is_zero(meshes):
    g = surface_gradient(meshes[3], np.full(meshes[3].n_vertices, 7.5))
    assert np.max(np.abs(g)) < 1e-12


def test_gradient_of_linear_field_is_exact_in_plane(meshes):
    m = meshes[2]
    c = np.array([0.3, -1.2, 0.7])
    g = surface_gradient(m, m.vertices @ c)
    n = m.normals
    expected = c - np.einsum("ij,j->i", n, c)[:, None] * n
    np.testing.assert_allclose(g, expected, atol=1e-12)
    assert np.max(np.abs(np.einsum("ij,ij->i", g, n))) < 1e-12


def test_gradient_of_x3_matches_tangential_projection(meshes):
    errs = []
    for L in (3, 4, 5):
        m = meshes[L]
        g = surface_gradient(m, m.vertices[:, 2])
        b = m.barycenters / np.linalg.norm(m.barycenters, axis=1, keepdims=True)
        expected = np.sqrt(1 - b[:, 2] ** 2)
        errs.append(np.max(np.abs(np.linalg.norm(g, axis=1) - expected)))
    assert errs[-1] < 0.02
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 32 - 1))
def test_gradient_is_linear(a, b, seed):
    m = build_sphere_mesh(UNIT, 2)
    rng = np.random.default_rng(seed)
    phi, psi = rng.standard_normal((2, m.n_vertices))
    lhs = surface_gradient(m, a * phi + b * psi)
    rhs = a * surface_gradient(m, phi) + b * surface_gradient(m, psi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(1.0, 6.0), st.integers(0, 2 ** 32 - 1))
def test_p_norm_homogeneity(c, p, seed):
    m = build_sphere_mesh(UNIT, 2)
    v = np.random.default_rng(seed).standard_normal(m.n_triangles)
    assert np.isclose(integrate_p_norm(m, c * v, p), abs(c) ** p * integrate_p_norm(m, v, p), rtol=1e-10)


def test_degenerate_triangle_rejected():
    v = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
    m = SurfaceMesh(v, [[0, 1, 2]], np.zeros(3, bool), np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        surface_gradient(m, np.zeros(3))


# --------------------------------------------------------------------------
# trace marking

def _angle_to_axis(m):
    u = (m.vertices - m.center) / m.radius
    return np.arccos(np.clip(np.abs(u[:, 0]), -1, 1))


@pytest.mark.parametrize("boundary", ["snap", "offset"])
def test_identity_trace_is_two_antipodal_caps(meshes, boundary):
    tube = 0.2
    m = mark_quasiplane_trace(meshes[4], identity_map(3), 1, tube, boundary=boundary)
    ang = _angle_to_axis(m)
    marked = m.dirichlet_mask
    assert marked.any() and not m.trace_empty
    # marked vertices sit near (+-1, 0, 0) within the tube plus half an edge
    assert np.max(ang[marked]) <= tube + 0.6 * m.mean_edge_length
    x = m.vertices[marked, 0]
    assert np.any(x > 0) and np.any(x < 0)
    assert np.all(m.free[ang > tube + m.mean_edge_length])


def test_snapped_vertices_lie_on_tube_and_sphere(meshes):
    tube = 0.15
    m = mark_quasiplane_trace(meshes[4], identity_map(3), 1, tube)
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0, atol=1e-12)
    moved = np.any(m.vertices != meshes[4].vertices, axis=1)
    assert moved.any()
    d = trace_distance(m, identity_map(3), 1)
    np.testing.assert_allclose(d[moved], tube, atol=1e-9)
    assert np.all(m.dirichlet_mask[moved])
    # no triangle degenerates
    assert np.min(m.areas / meshes[4].areas) > 0.1
    assert np.all(m.gradient_operator.shape == (3 * m.n_triangles, m.n_vertices))


def test_sphere_missing_the_quasiplane_reports_empty_trace(meshes):
    m = build_sphere_mesh(Sphere([0.0, 0.0, 5.0], 1.0), 3)
    out = mark_quasiplane_trace(m, identity_map(3), 1, 0.1)
    assert out.trace_empty
    assert not out.dirichlet_mask.any()


def test_tube_covering_everything_raises(meshes):
    with pytest.raises(EmptyFreeRegionError):
        mark_quasiplane_trace(meshes[2], identity_map(3), 1, 5.0)


@pytest.mark.parametrize("kw", [dict(k=0), dict(k=2), dict(tube_radius=0.0), dict(boundary="nope")])
def test_trace_argument_errors(meshes, kw):
    args = dict(k=1, tube_radius=0.1)
    args.update(kw)
    with pytest.raises(ValueError):
        mark_quasiplane_trace(meshes[2], identity_map(3), **args)


@pytest.mark.parametrize("boundary", ["snap", "offset"])
def test_mask_monotone_in_tube_radius(meshes, boundary):
    f = identity_map(3)
    prev = None
    for tube in (0.05, 0.08, 0.12, 0.2, 0.3, 0.45):
        mask = mark_quasiplane_trace(meshes[4], f, 1, tube, boundary=boundary).dirichlet_mask
        if prev is not None:
            assert np.all(mask[prev])
        prev = mask


def test_keep_point_selects_component():
    # a tube around the x1-axis with radius above the equator splits nothing;
    # use a great-circle-like trace from a plane instead: k=1 cuts two caps,
    # so choose the radial stretch whose trace is the same two points.
    m = build_sphere_mesh(UNIT, 3)
    f = radial_stretch(3, 2.0)
    out = mark_quasiplane_trace(m, f, 1, 0.3, keep_point=[0, 0, 1])
    ncomp, _ = out.free_components()
    assert ncomp == 1


def test_disconnected_free_region_keeps_requested_side():
    m = build_sphere_mesh(UNIT, 4)
    # mask a band around the equator by a cap complement trick: keep cap at +z
    cap = mark_cap_complement(m, [0, 0, 1], 0.6)
    assert np.all(cap.vertices[cap.free, 2] > np.cos(0.6) - 1e-12)
    ncomp, _ = cap.free_components()
    assert ncomp == 1


def test_shear_trace_matches_preimage_points(shear):
    # oracle: minimise f2^2 + f3^2 over the sphere from many starts
    a = np.zeros(3)
    rng = np.random.default_rng(3)

    def obj(angles):
        th, ph = angles
        x = a + np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
        y = shear.eval(x)
        return y[1] ** 2 + y[2] ** 2

    roots = []
    for _ in range(40):
        res = minimize(obj, rng.uniform([0, -np.pi], [np.pi, np.pi]), method="Nelder-Mead",
                       options=dict(xatol=1e-12, fatol=1e-24, maxiter=4000))
        if res.fun < 1e-16:
            th, ph = res.x
            x = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
            if not any(np.linalg.norm(x - r) < 1e-4 for r in roots):
                roots.append(x)
    assert len(roots) == 2
    m = mark_quasiplane_trace(build_sphere_mesh(UNIT, 4), shear, 1, 0.1)
    marked = m.vertices[m.dirichlet_mask]
    d = np.min(np.linalg.norm(marked[:, None, :] - np.array(roots)[None], axis=2), axis=1)
    assert np.max(d) <= 0.1 + 0.6 * m.mean_edge_length
    for r in roots:
        assert np.min(np.linalg.norm(marked - r, axis=1)) < 0.1 + 1e-9


def test_cap_boundary_vertices_snap_to_angle():
    m = mark_cap_complement(build_sphere_mesh(UNIT, 4), [0, 0, 1], 0.4)
    ang = np.arccos(np.clip(m.vertices[:, 2], -1, 1))
    assert np.all(ang[m.free] < 0.4)
    on_circle = np.abs(ang - 0.4) < 1e-12
    assert on_circle.sum() >= 10
    assert np.all(m.dirichlet_mask[on_circle])


def test_cap_without_vertices_raises():
    with pytest.raises(EmptyFreeRegionError):
        mark_cap_complement(build_sphere_mesh(UNIT, 0), [0.3, 0.2, 0.9], 1e-3, boundary="offset")


def test_mesh_roundtrip(tmp_path):
    m = mark_quasiplane_trace(build_sphere_mesh(Sphere([0.5, 0, 0], 2.0), 2), identity_map(3), 1, 0.2)
    path = tmp_path / "mesh.txt"
    save_mesh(m, path)
    header = path.read_text().splitlines()[0]
    assert header == f"{m.n_vertices} {m.n_triangles}"
    back = load_mesh(path, center=[0.5, 0, 0], level=2)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_array_equal(back.dirichlet_mask, m.dirichlet_mask)
    assert np.isclose(back.radius, 2.0, rtol=1e-12)

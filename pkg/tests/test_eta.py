import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiplane.eta import (
    NoBoundaryError,
    descend_quotient,
    estimate_lambda,
    lambda_radial_profile,
    p_schedule,
    rayleigh_quotient,
    shifted_quotient,
    sup_over_A_scan,
)
from quasiplane.geometry import (
    Sphere,
    build_sphere_mesh,
    mark_cap_complement,
    mark_quasiplane_trace,
    vertex_p_norm,
)
from quasiplane.maps import QCMapSpec, identity_map, radial_stretch

from .conftest import cap_lambda_oracle

ORIGIN = np.zeros(3)
NORTH = np.array([0.0, 0.0, 1.0])


def unit_mesh(level):
    return build_sphere_mesh(Sphere(ORIGIN, 1.0), level)


@pytest.fixture(scope="module")
def tube_mesh():
    return mark_quasiplane_trace(unit_mesh(4), identity_map(3), 1, 0.1)


@pytest.fixture(scope="module")
def tube_est(tube_mesh):
    return estimate_lambda(tube_mesh, 3.0, tol=1e-10)


def test_p_schedule():
    assert p_schedule(2.0) == []
    assert p_schedule(3.0) == [2.25, 2.5, 2.75, 3.0]
    assert p_schedule(2.1) == [2.1]


def test_cap_p2_converges_to_oracle():
    theta = 0.2
    exact = cap_lambda_oracle(theta)
    errs = []
    for level in (4, 5, 6):
        m = mark_cap_complement(unit_mesh(level), NORTH, theta)
        errs.append(abs(estimate_lambda(m, 2.0, tol=1e-10).lam - exact) / exact)
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.005
    # second-order convergence of the snapped boundary
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_cap_p3_matches_oracle():
    theta = 0.3
    exact = cap_lambda_oracle(theta, p=3.0)
    m = mark_cap_complement(unit_mesh(5), NORTH, theta)
    est = estimate_lambda(m, 3.0, tol=1e-10)
    assert est.trusted
    assert abs(est.lam - exact) / exact < 0.01


def test_cap_p2_offset_mode_is_first_order():
    theta = 0.3
    exact = cap_lambda_oracle(theta)
    e = [abs(estimate_lambda(mark_cap_complement(unit_mesh(L), NORTH, theta, boundary="offset"),
                             2.0, tol=1e-10).lam - exact) for L in (4, 5)]
    assert 1.3 < e[0] / e[1] < 3.0


def test_scaling_with_radius(tube_mesh, tube_est):
    for tau in (0.5, 3.0):
        scaled = tube_mesh.scaled(tau)
        lam = estimate_lambda(scaled, 3.0, tol=1e-10).lam
        assert lam * tau == pytest.approx(tube_est.lam, rel=1e-6)


def test_radial_stretch_profile_scales_like_identity():
    # rays are preserved, so the trace is the same pair of antipodes at every radius
    prof = lambda_radial_profile(radial_stretch(3, 0.5), ORIGIN, [0.5, 1.0, 2.0], 4, 0.1)
    ident = lambda_radial_profile(identity_map(3), ORIGIN, [1.0], 4, 0.1)
    lt = prof.lam * prof.tau
    np.testing.assert_allclose(lt, lt[0], rtol=1e-6)
    # the tube is measured by the linearised preimage distance, so it differs slightly per map
    assert lt[0] == pytest.approx(ident.lam[0], rel=1e-2)


def test_domain_monotonicity():
    # larger Dirichlet set on a fixed mesh cannot lower lambda
    mesh = unit_mesh(4)
    lams = [estimate_lambda(mark_quasiplane_trace(mesh, identity_map(3), 1, t, boundary="offset"),
                            3.0, tol=1e-10).lam for t in (0.05, 0.1, 0.2, 0.4)]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(lams, lams[1:]))
    assert lams[-1] > lams[0]


def test_no_boundary_raises():
    with pytest.raises(NoBoundaryError):
        estimate_lambda(unit_mesh(2), 3.0)


def test_disconnected_free_region_raises():
    m = unit_mesh(3)
    band = np.abs(m.vertices[:, 2]) < 0.2
    with pytest.raises(ValueError, match="connected"):
        estimate_lambda(m.with_mask(band), 3.0)


def test_bad_arguments(tube_mesh):
    with pytest.raises(ValueError):
        estimate_lambda(tube_mesh, 1.5)
    with pytest.raises(ValueError):
        estimate_lambda(tube_mesh, 3.0, tol=0.0)


def test_minimizer_normalised_and_one_signed(tube_mesh, tube_est):
    u = tube_est.minimizer
    assert np.all(u[tube_mesh.dirichlet_mask] == 0)
    assert vertex_p_norm(tube_mesh, u, 3.0) == pytest.approx(1.0, rel=1e-12)
    assert np.all(u >= 0) or np.all(u <= 0)
    assert rayleigh_quotient(tube_mesh, u, 3.0) == pytest.approx(tube_est.lam, rel=1e-12)
    assert tube_est.trusted
    assert tube_est.lambda_p2 < tube_est.lam * 1.5


def test_seed_independence(tube_mesh, tube_est):
    other = estimate_lambda(tube_mesh, 3.0, tol=1e-10, seed=123)
    assert other.lam == pytest.approx(tube_est.lam, rel=1e-7)


def test_plain_descent_agrees_at_p2(tube_mesh):
    est = estimate_lambda(tube_mesh, 2.0, tol=1e-10)
    rng = np.random.default_rng(0)
    start = np.where(tube_mesh.dirichlet_mask, 0.0, rng.uniform(0.1, 1.0, tube_mesh.n_vertices))
    lam, u, it, ok = descend_quotient(tube_mesh, start, 2.0, tol=1e-12, maxiter=20000)
    assert lam == pytest.approx(est.lam, rel=1e-5)


@pytest.fixture(scope="module")
def tube_lams(tube_mesh, tube_est):
    return {2.0: estimate_lambda(tube_mesh, 2.0, tol=1e-10).lam, 3.0: tube_est.lam}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2.0, 3.0]))
def test_rayleigh_quotient_bounded_below(tube_mesh, tube_lams, seed, p):
    lam = tube_lams[p]
    rng = np.random.default_rng(seed)
    u = rng.normal(size=tube_mesh.n_vertices)
    u[tube_mesh.dirichlet_mask] = 0.0
    assert rayleigh_quotient(tube_mesh, u, p) >= lam * (1 - 1e-8)


def test_sup_over_A_scan(tube_mesh, tube_est):
    grid = [-1.0, -0.1, 0.0, 0.1, 1.0]
    rows = dict(sup_over_A_scan(tube_mesh, 3.0, grid, delta=1.0, base=tube_est))
    assert rows[0.0] == tube_est.lam
    for A, v in rows.items():
        assert 0 < v <= tube_est.lam * (1 + 1e-12)
    # A -> -A with phi -> -phi is a symmetry
    assert rows[0.1] == pytest.approx(rows[-0.1], rel=1e-6)
    assert rows[1.0] == pytest.approx(rows[-1.0], rel=1e-6)
    # a shift can only help: the guarded infimum drops below lambda for A != 0
    assert rows[1.0] < tube_est.lam
    with pytest.raises(ValueError):
        sup_over_A_scan(tube_mesh, 3.0, grid, delta=0.0, base=tube_est)


def test_shifted_quotient_at_zero_matches(tube_mesh, tube_est):
    u = tube_est.minimizer
    assert shifted_quotient(tube_mesh, u, 3.0, 0.0) == pytest.approx(tube_est.lam, rel=1e-12)


def test_profile_rejects_off_plane_center_and_bad_radii():
    with pytest.raises(ValueError, match="not on the quasiplane"):
        lambda_radial_profile(identity_map(3), [0.0, 0.5, 0.0], [1.0], 3, 0.1)
    with pytest.raises(ValueError):
        lambda_radial_profile(identity_map(3), ORIGIN, [1.0, 0.5], 3, 0.1)
    with pytest.raises(ValueError):
        lambda_radial_profile(identity_map(3), ORIGIN, [0.0, 1.0], 3, 0.1)


def test_profile_flags_spheres_missing_the_plane(tmp_path):
    # toy map fixing the origin whose zero set leaves the unit sphere untouched
    def f(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        out = x.copy()
        out[..., 1] = x[..., 1] + 5.0 * r2
        return out

    def jac(x):
        x = np.asarray(x, dtype=float)
        J = np.broadcast_to(np.eye(3), x.shape + (3,)).copy()
        J[..., 1, :] += 10.0 * x
        return J

    toy = QCMapSpec("toy", 3, f, jac)
    diag = tmp_path / "diag.jsonl"
    prof = lambda_radial_profile(toy, ORIGIN, [0.02, 1.0], 3, 0.05, diagnostics_path=diag)
    first, second = prof.rows
    assert first.usable and np.isfinite(first.lam)
    assert not second.usable and np.isnan(second.lam)
    assert "no boundary" in second.flags[0]
    assert len(diag.read_text().splitlines()) == 1

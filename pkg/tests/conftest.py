import numpy as np
import pytest
from scipy.optimize import brentq

from quasiplane.maps import shear_bump_map

SHEAR_DEFAULT = dict(n=3, c=0.3, x0=[0.0, 0.0, 0.0], s=1.0)


def shear_axis_point():
    """Point of the default shear-bump quasiplane on the x3-axis: z + 0.3 exp(-z^2) = 0."""
    z = brentq(lambda t: t + 0.3 * np.exp(-t * t), -1.0, 0.0, xtol=1e-15)
    return np.array([0.0, 0.0, z])


@pytest.fixture(scope="session")
def shear():
    return shear_bump_map(**SHEAR_DEFAULT)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("QUASIPLANE_OUTPUT_ROOT", str(root))
    return root


def cap_lambda_oracle(theta, p=2.0):
    """First Dirichlet p-eigenvalue (as lambda = mu^(1/p)) of a geodesic cap on the unit sphere.

    Shoots the radial p-Laplace equation ``(sin t |u'|^(p-2) u')' + mu sin t |u|^(p-2) u = 0``
    from the pole with u = 1 and finds the smallest mu with u(theta) = 0.
    """
    from scipy.integrate import solve_ivp

    t0 = 1e-7 * theta

    def u_end(mu):
        def rhs(t, y):
            u, w = y
            g = w / np.sin(t)
            du = np.sign(g) * abs(g) ** (1.0 / (p - 1.0))
            return [du, -mu * np.sin(t) * np.sign(u) * abs(u) ** (p - 1.0)]

        sol = solve_ivp(rhs, (t0, theta), [1.0, -mu * t0 * t0 / 2.0], method="DOP853",
                        rtol=1e-12, atol=1e-14)
        return sol.y[0, -1]

    # bracket the first sign change of u(theta) in lambda * theta
    grid = np.linspace(1.0, 6.0, 51)
    vals = [u_end((g / theta) ** p) for g in grid]
    i = next(j for j in range(len(grid)) if vals[j + 1] < 0 < vals[j])
    g = brentq(lambda g: u_end((g / theta) ** p), grid[i], grid[i + 1], xtol=1e-13)
    return g / theta


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record and print one acceptance line; returns ``ok`` so the caller can assert it."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number, title, ok, detail):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

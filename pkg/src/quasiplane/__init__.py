"""Numerical checks of volume-growth inequalities for quasiplanes under quasiconformal maps.

Modules
-------
geometry      icosphere meshes, Dirichlet marking of quasiplane traces, P1 gradients
maps          explicit quasiconformal maps and dilatation estimates
eta           first p-Rayleigh quotient on sphere complements
distortion    closed-form bounds, radial distortion, volume growth, the inequality chain
inequalities  pointwise matrix inequalities and their property suite
runner, cli   configured runs, persisted reports, command line
"""

__version__ = "0.1.0"

from .distortion import (  # noqa: E402
    VerificationReport,
    capacity_energy_check,
    capacity_round_ring,
    check_growth_exponent,
    dstar,
    main_bound,
    min_max_radius,
    verify_main_inequality,
    volume_growth,
)
from .eta import LambdaEstimate, estimate_lambda, lambda_radial_profile  # noqa: E402
from .geometry import (  # noqa: E402
    Sphere,
    SurfaceMesh,
    build_sphere_mesh,
    mark_cap_complement,
    mark_quasiplane_trace,
)
from .maps import (  # noqa: E402
    QCMapSpec,
    estimate_dilatations,
    identity_map,
    linear_map,
    radial_stretch,
    shear_bump_map,
)

__all__ = [
    "__version__",
    "Sphere", "SurfaceMesh", "build_sphere_mesh", "mark_cap_complement", "mark_quasiplane_trace",
    "QCMapSpec", "identity_map", "radial_stretch", "linear_map", "shear_bump_map",
    "estimate_dilatations",
    "LambdaEstimate", "estimate_lambda", "lambda_radial_profile",
    "dstar", "main_bound", "capacity_round_ring", "capacity_energy_check", "min_max_radius",
    "volume_growth", "check_growth_exponent", "verify_main_inequality", "VerificationReport",
]

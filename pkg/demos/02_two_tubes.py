"""
Thin Dirichlet tubes: p = 2 against p = 3
=========================================

Remove two small antipodal discs of radius eps from the unit sphere (the trace
of a line through the centre) and watch the first p-Rayleigh quotient as eps
shrinks.  On a 2-sphere, points have zero 2-capacity, so the p = 2 value
decays to 0 (slowly, like 1/sqrt(log(1/eps))).  Points have positive
p-capacity for p > 2, so the p = 3 value levels off.
"""

import numpy as np

from quasiplane.eta import estimate_lambda
from quasiplane.geometry import Sphere, build_sphere_mesh, mark_quasiplane_trace
from quasiplane.maps import identity_map

level = 5
mesh = build_sphere_mesh(Sphere(np.zeros(3), 1.0), level)
line = identity_map(3)

#%%
eps_values = [0.2, 0.1, 0.05]
print(f"level {level}, mean edge {mesh.mean_edge_length:.4f}")
print(f"{'eps':>6} {'lambda_2':>10} {'lambda_3':>10}")
prev = None
for eps in eps_values:
    marked = mark_quasiplane_trace(mesh, line, 1, eps)
    lam2 = estimate_lambda(marked, 2.0).lam
    lam3 = estimate_lambda(marked, 3.0).lam
    note = "" if prev is None else f"   change {100 * (lam2 / prev[0] - 1):+.1f}% / {100 * (lam3 / prev[1] - 1):+.1f}%"
    print(f"{eps:>6} {lam2:>10.5f} {lam3:>10.5f}{note}")
    prev = (lam2, lam3)

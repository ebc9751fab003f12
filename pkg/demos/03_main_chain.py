"""
The volume-growth chain for a radial stretch
============================================

For x -> |x|^(alpha - 1) x the image of B(0, r) is B(0, r^alpha), so
V(R)/V(r) = (R/r)^(3 alpha) exactly.  With alpha = 1/2 we have K_O = 2 and
K_I = 4, so beta = 2.  The chain

    exp(int_r^R lambda / K_O)  <=  V(R)/V(r)  <=  D_*(K)^6 (R/r)^(3 beta)

is assembled from the lambda profile of the line through the origin.
"""

import numpy as np

from quasiplane.distortion import verify_main_inequality
from quasiplane.maps import radial_stretch

f = radial_stretch(3, 0.5)
report = verify_main_inequality(f, np.zeros(3), 1.0, 2.0, tau_steps=4, mesh_level=4, tube_radius=0.1)

#%%
print(report.summary())
print(f"K_O = {report.KO_used} ({report.KO_source}), K = {report.K_used}, beta = {report.beta}")
print(f"V(R)/V(r) = {report.mid:.8f}   closed form (R/r)^(3/2) = {2 ** 1.5:.8f}")
for row in report.profile.rows:
    print(f"  tau = {row.tau:.3f}   lambda = {row.lam:.6f}   lambda * tau = {row.lam * row.tau:.6f}")

#%%
# The same report as one flat CSV row, as written by ``quasiplane verify-main``.
print(report.to_csv())

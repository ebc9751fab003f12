"""
Pointwise Jacobian inequalities
===============================

The estimates feeding the variational bound are statements about a single
matrix M = f'(x).  Each check returns a relative slack, and a nonnegative slack
means the inequality holds.  Orthogonal matrices and the identity are equality
cases.
"""

import numpy as np

from quasiplane.inequalities import (
    check_hadamard_wedge,
    check_phi_bound,
    check_row_gradient_bound,
    constants,
    run_property_suite,
    wedge_minor_norm,
)

#%%
# Equality witnesses.
Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
print("orthogonal, omitted row 2:", check_hadamard_wedge(Q, 2))
print("orthogonal, row 3        :", check_row_gradient_bound(Q, 3))
print("identity, k=1 (n=3)      :", check_phi_bound(np.eye(3), 1))
print("constants(3, 1)          :", constants(3, 1))

#%%
# A stretched matrix has room to spare.
M = np.diag([2.0, 1.0, 1.0])
print("wedge of rows 2, 3 of diag(2,1,1):", wedge_minor_norm(M, 1))
print("slacks:", check_hadamard_wedge(M, 1))

#%%
# Random property run over Gaussian, orthogonal, rank-deficient and
# ill-conditioned matrices.
rows = run_property_suite(trials=20_000, seed=1)
print(f"{'n':>2} {'k':>2} {'check':16s} {'violations':>10s} {'min slack':>12s}")
for r in rows:
    print(f"{r['n']:>2} {r['k']:>2} {r['check']:16s} {r['violations']:>10d} {r['min_slack']:>12.3g}")

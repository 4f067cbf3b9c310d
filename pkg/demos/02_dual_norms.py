"""
Dual norms and transition work
==============================

On the unit interval with an exit at x=0 and a wall at x=1, the
constant density 1 has dual norm 1/sqrt(3).  The discrete value converges
at second order.
"""

import numpy as np

from dispersal import BoundarySplit, build_interval_mesh
from dispersal.elliptic import hminus1_norm, transition_work

exact = 1 / np.sqrt(3)
prev = None
for n in (16, 32, 64, 128, 256):
    mesh = build_interval_mesh(0, 1, n)
    split = BoundarySplit.from_sides(mesh, {"left": "dirichlet", "right": "neumann"})
    err = abs(hminus1_norm(mesh, split, 1.0, np.ones(mesh.n_nodes)) - exact)
    order = "" if prev is None else f"  order {np.log2(prev / err):.3f}"
    print(f"{n:4d} cells  error {err:.3e}{order}")
    prev = err

# a unit inflow through the wall costs half a unit of work to carry to the exit,
# and the cost is quadratic in the inflow
pi = np.zeros(mesh.n_facets)
pi[mesh.facets_on("right")] = 1.0
for scale in (1.0, 2.0, 3.0):
    print(f"inflow {scale}: work {transition_work(mesh, split, 1.0, pi=scale * pi):.10f}")

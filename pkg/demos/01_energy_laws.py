"""
Energy laws, conjugates and proximal maps
=========================================

A tour of the pointwise layer: each law knows its energy density, its
conjugate, and the proximal maps the step solver calls at every node.
"""

import numpy as np

from dispersal import CrowdMotion, PorousMedium, QuadraticShifted
from dispersal.energy_laws import coupled_membership, prox_coupled

laws = {"porous medium m=2": PorousMedium(2.0),
        "crowd motion, cap 1": CrowdMotion(1.0),
        "quadratic with penalty above 0.5": QuadraticShifted(1.0, 0.5)}

# energy and conjugate on a few densities and potentials
r = np.array([0.0, 0.5, 1.0, 2.0])
q = np.array([-1.0, 0.0, 1.0, 2.0])
for name, law in laws.items():
    print(f"{name:34s} beta(r) = {np.round(law.beta(r), 4)}   beta*(q) = {np.round(law.conjugate(q), 4)}")

# Fenchel-Young: beta(r) + beta*(q) - qr is never negative
law = laws["porous medium m=2"]
rr, qq = np.meshgrid(np.linspace(0, 3, 61), np.linspace(-3, 3, 61))
print("\nsmallest Fenchel-Young gap:", float(np.min(law.beta(rr) + law.conjugate(qq) - qq * rr)))

# the coupled prox treats the two potentials through their maximum;
# close potentials get tied, distant ones are moved independently
for q1, q2 in [(1.0, 1.1), (1.0, 3.0), (-1.0, -2.0)]:
    a1, a2 = prox_coupled(law, None, 1.0, q1, q2)
    print(f"prox of ({q1:+.1f}, {q2:+.1f}) -> ({float(a1):+.4f}, {float(a2):+.4f})")

# a density pair with a potential pair: on the graph when the occupied
# species sit at the common maximum potential
law = PorousMedium(1.0)
for rho, eta in [((1.0, 2.0), (3.0, 3.0)), ((1.0, 0.0), (1.0, 0.2)), ((1.0, 2.0), (3.0, 2.0))]:
    rep = coupled_membership(law, None, rho, eta)
    print(f"rho={rho} eta={eta}: member={rep.member}, all four tests agree={rep.agree}")

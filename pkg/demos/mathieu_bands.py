"""Mathieu bands: plane-wave energies against tabulated characteristic values.

For V(z) = 2 cos z the cell problem is Mathieu's equation with q = 8 after
the substitution z = 2v, so E = a / 8 at the band edges.
"""
import numpy as np
from scipy.special import mathieu_a, mathieu_b

from blochpacket.bands import BandModel
from blochpacket.lattice import PeriodicPotential, cubic_lattice

V = PeriodicPotential.from_triples(cubic_lattice(1), [((1,), 1.0, 0.0)])
model = BandModel(V, 10.0)

edges = {
    "E1(0)": (model.slice([0.0]).all_energies[0], mathieu_a(0, 8) / 8),
    "E2(0)": (model.slice([0.0]).all_energies[1], mathieu_b(2, 8) / 8),
    "E1(1/2)": (model.slice([0.5]).all_energies[0], mathieu_b(1, 8) / 8),
    "E2(1/2)": (model.slice([0.5]).all_energies[1], mathieu_a(1, 8) / 8),
}
for name, (ours, ref) in edges.items():
    print(f"{name:8s} plane waves {ours: .12f}   Mathieu {ref: .12f}   diff {ours - ref: .1e}")

print("\n   p       E1          dE1/dp       d2E1/dp2    connection")
for p in np.linspace(-0.5, 0.5, 11):
    bd = model.derivatives([p])
    print(f"{p: .2f}  {bd.energy: .8f}  {bd.grad_E[0]: .3e}  {bd.hess_E[0, 0]: .5f}  {bd.berry_connection[0]: .1e}")

"""Berry curvature of the lowest band of an inversion-asymmetric square lattice.

V = 2 cos z1 + 2 cos z2 - 2 sin(z1 + z2).  The curvature is computed from
the resolvent (sum over states) and from gauge-invariant plaquettes; a
symmetric potential without the sine term gives zero curvature.
"""
import numpy as np

from blochpacket.bands import BandModel, curvature_plaquette, curvature_resolvent, solve_bands
from blochpacket.lattice import PeriodicPotential, cubic_lattice

lat = cubic_lattice(2)
asym = PeriodicPotential.from_triples(lat, [((1, 0), 1.0, 0.0), ((0, 1), 1.0, 0.0), ((1, 1), 0.0, 1.0)])
sym = PeriodicPotential.from_triples(lat, [((1, 0), 1.0, 0.0), ((0, 1), 1.0, 0.0)])
models = {"asymmetric": BandModel(asym, 5.0), "symmetric": BandModel(sym, 5.0)}

n = 6
f = (np.arange(n) + 0.5) / n - 0.5
for name, model in models.items():
    worst, fmax = 0.0, 0.0
    rows = []
    for f1 in f:
        row = []
        for f2 in f:
            p = lat.dual_generators @ np.array([f1, f2])
            Fr = curvature_resolvent(solve_bands(model.V, model.trunc, p, vmat=model._vmat))[0, 1]
            Fp = curvature_plaquette(model.V, model.trunc, p, vmat=model._vmat)[0, 1]
            worst, fmax = max(worst, abs(Fr - Fp)), max(fmax, abs(Fr))
            row.append(Fr)
        rows.append(row)
    print(f"{name}: max |F12| = {fmax:.3e}, max |resolvent - plaquette| = {worst:.1e}")
    if fmax > 1e-8:
        for row in rows:
            print("   " + " ".join(f"{v: .2e}" for v in row))

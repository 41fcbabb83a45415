"""Gaussian envelope along a Mathieu trajectory.

The pair (A, B) obeys A' = D2E B, B' = -D2W A.  The two symplectic
conditions are conserved, and the closed form agrees with a split-step
solve of the envelope equation on a grid.
"""
import numpy as np

from blochpacket.bands import BandModel
from blochpacket.dynamics import Trajectory
from blochpacket.envelope import (EnvelopeGrid, evolve_a_grid, evolve_gaussian, gaussian_sample,
                                  l2norm, make_gaussian, symplectic_residuals)
from blochpacket.lattice import ExternalPotential, PeriodicPotential, cubic_lattice

V = PeriodicPotential.from_triples(cubic_lattice(1), [((1,), 1.0, 0.0)])
model = BandModel(V, 10.0)
W = ExternalPotential.cosine(0.1)
traj = Trajectory(model, W, [2.5], [0.3], 1.0, 1e-3)

g0 = make_gaussian(np.pi**-0.25, [[2.0]], [[0.5j]])
grid_env = EnvelopeGrid.from_gaussian(g0)
t = 0.0
print("  t     A                      B                      residuals         grid gap")
for t1 in (0.25, 0.5, 0.75, 1.0):
    gT = evolve_gaussian(g0, traj.hessE_path, traj.hessW_path, 0.0, t1, 1e-3)
    grid_env = evolve_a_grid(grid_env, traj.hessE_path, traj.hessW_path, t, t1, 1e-3)
    t = t1
    gap = l2norm(gaussian_sample(gT, grid_env.grid) - grid_env.a, grid_env.grid)
    r1, r2 = symplectic_residuals(gT.A, gT.B)
    print(f"{t1:.2f}  {gT.A[0, 0]:.6f}  {gT.B[0, 0]:.6f}  {r1:.1e} {r2:.1e}  {gap:.1e}")

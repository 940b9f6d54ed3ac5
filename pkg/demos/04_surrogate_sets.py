"""
Surrogate training sets
=======================

After a full scan, a few points with estimates spread evenly between the
tolerance and the maximum stand in for the whole set for a while.
"""

import numpy as np

from rbgreedy.greedy import damping_continue, smm_build_sts, smm_levels

rng = np.random.default_rng(3)
deltas = 10.0 ** rng.uniform(-4, 0, 5000)
ids = np.arange(len(deltas))

tol = 1e-4
for m in (5, 20, 80):
    levels = smm_levels(tol, deltas.max(), m)
    picked = smm_build_sts(ids, deltas, tol, m)
    print(f"M = {m:3d}: {len(picked)} points, lowest level {levels[0]:.1e}, top {levels[-1]:.3f}")

# With this many estimates every level finds its own point, sitting almost
# exactly on the level.  Repeated values would collapse onto fewer points.
print(np.sort(deltas[smm_build_sts(ids, deltas, tol, 20)])[:6])
print(smm_build_sts(ids[:10], np.full(10, 0.3), tol, 20))

# The inner loop keeps going while the maximum on the surrogate set has not
# dropped by the damping ratio 1 / (k_damp (ell + 1)).
E = 0.2
for eps in (0.05, 0.01, 0.004):
    print(eps, [damping_continue(eps, E, 20, ell) for ell in range(4)])

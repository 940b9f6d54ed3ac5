"""
Building and certifying a reduced basis
=======================================

A handful of snapshots already gives a surrogate whose error is bounded
by a cheap residual estimator.  The estimator needs only small arrays
once the offline stage is done.
"""

import numpy as np

from rbgreedy import RBSpace, error_estimate, rb_solve, thermal_block, true_error, truth_solve
from rbgreedy.rb import sweep

model = thermal_block(21)
rng = np.random.default_rng(0)

space = RBSpace(model)
for mu in rng.uniform(0.1, 10, (12, 9)):
    space.augment(truth_solve(model, mu))
print("basis size:", space.N)

# Compare the bound with the true error at a few fresh parameters.
print(f"{'true X-err':>12} {'bound':>12} {'effectivity':>12}")
for mu in rng.uniform(0.1, 10, (5, 9)):
    sol = rb_solve(space, mu)
    err, _ = true_error(space, model, mu, sol)
    bound = error_estimate(space, model, mu, sol).value
    print(f"{err:12.3e} {bound:12.3e} {bound / err:12.2f}")

# The online data carries nothing of truth size.
online = space.online()
print({k: v.shape for k, v in online.arrays().items()})

# So a sweep over many parameters is cheap.
mus = rng.uniform(0.1, 10, (20_000, 9))
deltas = sweep(online, mus)
print(f"20000 estimates, worst {deltas.max():.3e}, median {np.median(deltas):.3e}")

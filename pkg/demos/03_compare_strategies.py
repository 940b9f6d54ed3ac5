"""
Six ways to pick snapshots
==========================

The classical greedy scans the whole training set at every step.  The
other strategies scan less and end up with much the same basis.  Work
is counted in estimator evaluations.
"""

import numpy as np

from rbgreedy import GreedyConfig, run_strategy, sample_training_set, thermal_block
from rbgreedy.bench import evaluate_test_error, make_test_set

model = thermal_block(21)
n_train, tol = 10_000, 1e-3
xi = sample_training_set(model.parameter_box, n_train, np.random.default_rng(0))
test_set = make_test_set(model, 200, 1)

base, runs = None, {}
print(f"{'strategy':>8} {'N':>4} {'evals':>9} {'rel':>6} {'max H1 err':>11}")
for strategy in ("cg", "tsd", "ae", "sts", "h-tsd", "h-ae"):
    res = runs[strategy] = run_strategy(model, xi, GreedyConfig(strategy, tol, n_train, seed=0))
    evals = res.trace.est_evals
    base = base or evals
    err, _ = evaluate_test_error(res.space, model, test_set=test_set)
    print(f"{strategy:>8} {res.n:4d} {evals:9d} {evals / base:6.3f} {err:11.2e}")

# The convergence history of the classical run decays exponentially.
for n, d in runs["cg"].trace.convergence()[::8]:
    print(f"N = {n:3d}   max estimate {d:.2e}")

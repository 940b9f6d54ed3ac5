"""
The thermal block truth model
=============================

Nine conductivities, one per block of a 3x3 split of the unit square.
The top edge is held at zero, a unit flux enters through the bottom, and
the output is the mean temperature along the bottom edge.
"""

import numpy as np

from rbgreedy import output_functional, thermal_block, truth_solve, x_norm

model = thermal_block(21)
print(f"{model.dof_count} unknowns, Q_a = {model.Q_a}, Q_f = {model.Q_f}")

# With every conductivity equal to one the solution is the linear profile 1 - y.
sol = truth_solve(model, np.ones(9))
y = model.mesh.nodes[model.mesh.free, 1]
print("max deviation from 1 - y:", np.abs(sol.coefficients - (1 - y)).max())
print("output at mu = 1:", output_functional(model, sol))

# Scaling every conductivity by c scales the temperature by 1/c.
print("output at mu = 2:", output_functional(model, truth_solve(model, np.full(9, 2.0))))

# A checkerboard of good and bad conductors.
mu = np.array([0.1, 10] * 4 + [0.1])
sol = truth_solve(model, mu)
print("checkerboard output:", output_functional(model, sol), " X-norm:", x_norm(model, sol))

# The stiffness matrix is an affine sum, A(mu) = sum_q mu_q A_q.
K = sum(m * a for m, a in zip(mu, model.A))
print("affine sum matches:", abs(K - model.stiffness(mu)).max() < 1e-12)

"""Sparse SPDE prediction on a 100 x 100 grid from 400 noisy observations."""

import time

import numpy as np

from geofield.gmrf import GridSpec, SpdeParams, calibrate_tau, gmrf_conditional, precision, sample

grid = GridSpec(100, 100, h=0.1)
kappa = 2.0
tau = calibrate_tau(1.0, 2, kappa, grid)
prec = precision(SpdeParams(2, kappa, tau), grid)
print(f"{grid.size} grid nodes, {prec.n} after padding, {prec.Q.nnz} nonzeros in Q")

truth = sample(prec, seed=1)
rng = np.random.default_rng(2)
nodes = rng.choice(grid.size, 400, replace=False)
Y = truth[nodes] + rng.normal(0, 0.1, 400)

t0 = time.perf_counter()
pred = gmrf_conditional(prec, nodes, Y, 0.01)
print(f"conditional mean and variances in {time.perf_counter() - t0:.2f} s")
rmse = np.sqrt(np.mean((pred.mean - truth) ** 2))
print(f"rmse vs truth {rmse:.3f}, mean predictive sd {np.sqrt(pred.variance).mean():.3f}")

"""Predictive-process and bisquare-basis kriging on 4000 sites."""

import time

import numpy as np

from geofield.covmodel import CovarianceModel
from geofield.field import GaussianFieldModel, simulate
from geofield.lowrank import LowRankModel, bisquare_basis, lowrank_krige, predictive_process, regular_centers

rng = np.random.default_rng(3)
parent = CovarianceModel("matern", 1.0, 3.0, nu=1.5)
sites = rng.uniform(0, 30, size=(4000, 2))
Y = simulate(GaussianFieldModel(sites, parent), seed=rng) + rng.normal(0, 0.3, 4000)
targets = regular_centers(sites, 20)

knots = regular_centers(sites, 8)
pp = predictive_process(parent, knots, targets, obs_sites=sites, sigma_eps2=0.09)
t0 = time.perf_counter()
mean, var = lowrank_krige(pp, Y, return_variance=True)
print(f"predictive process, {len(knots)} knots: {time.perf_counter() - t0:.3f} s, mean sd {np.sqrt(var).mean():.3f}")

res = [regular_centers(sites, 4), regular_centers(sites, 10)]
Psi_y = bisquare_basis(sites, res)
frk = LowRankModel(bisquare_basis(targets, res), Psi_y, np.eye(Psi_y.shape[1]), 0.09)
t0 = time.perf_counter()
mean2 = lowrank_krige(frk, Y)
print(f"bisquare basis, r={Psi_y.shape[1]}: {time.perf_counter() - t0:.3f} s")
print(f"correlation of the two surfaces {np.corrcoef(mean, mean2)[0, 1]:.3f}")

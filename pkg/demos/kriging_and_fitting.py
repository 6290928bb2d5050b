"""Simulate an exponential field, fit it by variogram LS and REML, then krige."""

import numpy as np

from geofield.covmodel import CovarianceModel
from geofield.estimate import empirical_variogram, fit, fit_variogram_ls
from geofield.field import GaussianFieldModel, ObservationSet, krige, simulate

rng = np.random.default_rng(0)
truth = CovarianceModel("exponential", 1.0, 2.0, nugget=0.3)
locs = rng.uniform(0, 20, size=(300, 2))
B = np.column_stack([np.ones(300), locs[:, 0] / 20])
Y = simulate(GaussianFieldModel(locs, truth, B), beta=[1.0, 0.5], seed=rng)
obs = ObservationSet(locs, Y, B)

ev = empirical_variogram(obs, n_bins=15, max_lag=8.0)
ls = fit_variogram_ls(ev, "exponential", fit_nugget=True)
print(f"variogram LS: sigma2={ls.sigma2:.3f} rho={ls.rho:.3f} nugget={ls.nugget:.3f}")

res = fit(obs, init=ls, criterion="reml", free=["sigma2", "rho", "nugget"])
m = res.model
print(f"REML:         sigma2={m.sigma2:.3f} rho={m.rho:.3f} nugget={m.nugget:.3f} beta={np.round(res.beta_hat, 3)}")

xs = np.linspace(0.5, 19.5, 5)
targets = np.array([[x, 10.0] for x in xs])
pred = krige(GaussianFieldModel(targets, m, np.column_stack([np.ones(5), xs / 20])), obs)
for t, mu, v in zip(targets, pred.mean, pred.variance):
    print(f"  x={t[0]:5.2f}  mean={mu:+.3f}  sd={np.sqrt(v):.3f}")

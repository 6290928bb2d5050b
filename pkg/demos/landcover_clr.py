"""Regress land-cover proportions on covariates in clr coordinates."""

import numpy as np

from geofield.compositional import clr, clr_inverse, fit_composition_regression, replace_zeros, synthetic_landcover

lc = synthetic_landcover(n_side=20, k=3, seed=0)
U = clr(replace_zeros(lc.proportions))
full = fit_composition_regression(U, lc.covariates)
null = fit_composition_regression(U, lc.covariates[:, :1])
truth = clr_inverse(lc.true_clr)
for name, f in (("intercept only", null), ("all covariates", full)):
    r = np.corrcoef(f.proportions.ravel(), truth.ravel())[0, 1]
    print(f"{name:15s} corr with true proportions {r:.3f}")
print("coefficients (rows: " + ", ".join(lc.covariate_names) + ")")
print(np.round(full.coef, 3))

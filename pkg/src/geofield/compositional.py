"""
Compositional data: centred log-ratio (clr) transform, per-component
regression on clr coordinates and the coupled precision of two latent
fields.

Compositions are arrays of shape ``(n_sites, k)`` (or a single ``k``
vector) with positive rows summing to one.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _linalg
from .errors import DomainError, EstimationError
from .gmrf import SparsePrecision

ZERO_REPLACEMENT = 1e-6


def _rows(a):
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.ndim != 2:
        raise DomainError(f"expected a vector or a 2-d array, got shape {a.shape}")
    return a, single


def closure(y):
    """Rescale rows to sum to one."""
    y, single = _rows(y)
    out = y / y.sum(axis=1, keepdims=True)
    return out[0] if single else out


def replace_zeros(y, eps=ZERO_REPLACEMENT):
    """Replace entries ``<= 0`` by ``eps`` and renormalize each row."""
    y, single = _rows(y)
    if np.any(~np.isfinite(y)):
        raise DomainError("composition has non-finite entries")
    if np.any(y < 0):
        i, j = np.argwhere(y < 0)[0]
        raise DomainError(f"negative proportion at site {i}, component {j}")
    out = closure(np.where(y <= 0, eps, y))
    return out[0] if single else out


def clr(y):
    """``u_i = log(y_i / g(y))`` with ``g`` the geometric mean of the row."""
    y, single = _rows(y)
    bad = ~(y > 0) | ~np.isfinite(y)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DomainError(
            f"proportion at site {i}, component {j} is {y[i, j]!r}; "
            "clr needs positive entries (apply replace_zeros first)"
        )
    logy = np.log(y)
    u = logy - logy.mean(axis=1, keepdims=True)
    # one correction pass pulls the row sum to round-off level
    u -= u.mean(axis=1, keepdims=True)
    return u[0] if single else u


def clr_inverse(u):
    """Softmax back to the simplex, ``y_i = exp(u_i) / sum_j exp(u_j)``."""
    u, single = _rows(u)
    if not np.all(np.isfinite(u)):
        raise DomainError("clr coordinates must be finite")
    e = np.exp(u - u.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    return y[0] if single else y


@dataclass(frozen=True, eq=False)
class CompositionFit:
    """Per-component regression ``U[:, i] = B beta_i + e_i``.

    ``coef`` is ``p x k`` and centred so that fitted rows sum to zero;
    ``fitted_clr`` and ``proportions`` are site x k; ``residual_variance``
    has one entry per component (divisor ``n - p``, or ``n`` when
    ``n == p``).
    """

    coef: np.ndarray
    fitted_clr: np.ndarray
    proportions: np.ndarray
    residual_variance: np.ndarray


def fit_composition_regression(U, B):
    """Ordinary least squares per clr component."""
    U = np.asarray(U, dtype=float)
    B = np.asarray(B, dtype=float)
    if U.ndim != 2:
        raise DomainError("U must be sites x components")
    if B.ndim == 1:
        B = B[:, None]
    n, k = U.shape
    if B.shape[0] != n:
        raise DomainError(f"B has {B.shape[0]} rows but U has {n}")
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(B))):
        raise DomainError("U and B must be finite")
    p = B.shape[1]
    bad = _linalg.collinear_columns(B)
    if bad or p > n:
        raise EstimationError(f"covariate matrix is rank deficient; collinear columns {bad}")
    coef, *_ = np.linalg.lstsq(B, U, rcond=None)
    # fitted row means are B @ coef.mean(1); centring coef zeroes them
    coef = coef - coef.mean(axis=1, keepdims=True)
    fitted = B @ coef
    fitted -= fitted.mean(axis=1, keepdims=True)
    resid = U - fitted
    dof = n - p if n > p else n
    rv = np.sum(resid**2, axis=0) / dof
    return CompositionFit(coef, fitted, clr_inverse(fitted), rv)


@dataclass(frozen=True, eq=False)
class CoupledFieldModel:
    """Two latent fields with covariance ``[[1, rho], [rho, 1]] kron Q^-1``."""

    Q: SparsePrecision
    rho: float

    def __post_init__(self):
        rho = float(self.rho)
        if not np.isfinite(rho) or abs(rho) >= 1.0:
            raise DomainError(f"rho must lie in (-1, 1), got {self.rho!r}")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True, eq=False)
class CoupledPrecision:
    precision: SparsePrecision
    coupling_condition: float


def coupled_precision(model):
    """Precision ``R^-1 kron Q`` of the stacked pair ``(field 1, field 2)``.

    ``R`` is the 2 x 2 correlation block; its condition number
    ``(1 + |rho|) / (1 - |rho|)`` is reported alongside.
    """
    rho = model.rho
    Rinv = np.array([[1.0, -rho], [-rho, 1.0]]) / (1.0 - rho * rho)
    Q = model.Q.Q
    big = sp.kron(sp.csc_matrix(Rinv), Q, format="csc")
    big.eliminate_zeros()
    cond = (1.0 + abs(rho)) / (1.0 - abs(rho))
    n = Q.shape[0]
    interior = np.concatenate([model.Q.interior, n + model.Q.interior])
    return CoupledPrecision(SparsePrecision(big, interior=interior), float(cond))


@dataclass(frozen=True, eq=False)
class Landcover:
    """Synthetic land-cover instance on a regular grid of sites."""

    locs: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple
    proportions: np.ndarray
    true_clr: np.ndarray


def synthetic_landcover(n_side=20, k=3, noise=0.3, seed=None):
    """Regional land-cover proportions driven by simulated covariates.

    Covariates are an intercept, a smooth "natural vegetation" score,
    the two coordinates and a smooth elevation surface. True clr
    coordinates are linear in them plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    g = (np.arange(n_side) + 0.5) / n_side
    x, y = np.meshgrid(g, g, indexing="xy")
    x, y = x.ravel(), y.ravel()
    c = rng.uniform(0.2, 0.8, size=(2, 2))
    elev = np.exp(-((x - c[0, 0]) ** 2 + (y - c[0, 1]) ** 2) / 0.08)
    veg = np.sin(2.5 * np.pi * x + rng.uniform(0, np.pi)) * np.cos(1.5 * np.pi * y) - 0.5 * elev
    B = np.column_stack([np.ones_like(x), veg, x, y, elev])
    coef = rng.normal(0.0, 1.5, size=(B.shape[1], k))
    coef -= coef.mean(axis=1, keepdims=True)
    U_true = B @ coef
    U_obs = U_true + rng.normal(0.0, noise, size=U_true.shape)
    U_obs -= U_obs.mean(axis=1, keepdims=True)
    return Landcover(
        np.column_stack([x, y]),
        B,
        ("intercept", "natural_vegetation", "x", "y", "elevation"),
        clr_inverse(U_obs),
        U_true,
    )

"""
Isotropic covariance models, semi-variograms and compactly supported tapers.

The four covariance families are parameterised by a variance ``sigma2``,
a range ``rho`` and (Matérn only) a smoothness ``nu``::

    Matern       sigma2 * (h/rho)^nu K_nu(h/rho) / (Gamma(nu) 2^(nu-1))
    Exponential  sigma2 * exp(-h/rho)
    Gaussian     sigma2 * exp(-(h/rho)^2)
    Spherical    sigma2 * (1 - 1.5 h/rho + 0.5 (h/rho)^3)   for h < rho, else 0

With this parameterisation Matérn(nu=1/2) is exactly the exponential model.
A nugget variance is stored on the model but only ever enters the diagonal
of assembled matrices.

Tapers (``T(0) = 1``, ``T(h) = 0`` for ``h >= theta``)::

    Spherical  (1 - h/theta)^2 (1 + h/(2 theta))
    Wendland1  (1 - h/theta)^4 (1 + 4 h/theta)
    Wendland2  (1 - h/theta)^6 (1 + 6 h/theta + 35 h^2 / (3 theta^2))

Which taper keeps which Matérn smoothness consistent is not enforced here;
as a rule of thumb the taper should be at least as smooth as the model.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spl
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import gammaln, kv

from ._sparse import SparseCholesky
from .errors import DomainError, NumericalError

FAMILIES = ("matern", "exponential", "gaussian", "spherical")
TAPERS = ("spherical", "wendland1", "wendland2")

# below this scaled lag the Matérn expression is replaced by its limit sigma2
_MATERN_ORIGIN = 1e-12


def _canonical(name, allowed, what):
    key = str(name).strip().lower()
    if key not in allowed:
        raise DomainError(f"unknown {what} {name!r}; expected one of {allowed}")
    return key


@dataclass(frozen=True)
class CovarianceModel:
    """Parametric isotropic covariance model.

    Parameters
    ----------
    family : str
        One of ``matern``, ``exponential``, ``gaussian``, ``spherical``
        (case-insensitive).
    sigma2 : float
        Variance of the field, ``r(0)``.
    rho : float
        Range parameter.
    nu : float
        Matérn smoothness; ignored by the other families.
    nugget : float
        Variance added to the diagonal of assembled matrices.
    """

    family: str
    sigma2: float
    rho: float
    nu: float = 0.5
    nugget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", _canonical(self.family, FAMILIES, "family"))
        for name in ("sigma2", "rho", "nu", "nugget"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.sigma2 <= 0:
            raise DomainError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.rho <= 0:
            raise DomainError(f"rho must be > 0, got {self.rho}")
        if self.nugget < 0:
            raise DomainError(f"nugget must be >= 0, got {self.nugget}")
        if self.family == "matern" and self.nu <= 0:
            raise DomainError(f"nu must be > 0, got {self.nu}")

    def replace(self, **changes):
        values = dict(
            family=self.family,
            sigma2=self.sigma2,
            rho=self.rho,
            nu=self.nu,
            nugget=self.nugget,
        )
        values.update(changes)
        return CovarianceModel(**values)


@dataclass(frozen=True)
class TaperSpec:
    """Compactly supported taper of kind ``spherical``, ``wendland1`` or
    ``wendland2`` with support radius ``theta``."""

    kind: str
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "kind", _canonical(self.kind, TAPERS, "taper"))
        theta = float(self.theta)
        if not np.isfinite(theta) or theta <= 0:
            raise DomainError(f"theta must be finite and > 0, got {theta}")
        object.__setattr__(self, "theta", theta)


def as_locations(locs):
    """Validate coordinates and return them as an ``(n, d)`` float array.

    A 1-d input is read as ``n`` points on a line. Only ``d`` in {1, 2} is
    supported; duplicated points are allowed.
    """
    arr = np.asarray(locs, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] not in (1, 2):
        raise DomainError(f"locations must have shape (n, 1) or (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("locations must be finite")
    return arr


def _check_lags(h):
    h = np.asarray(h, dtype=float)
    if np.any(np.isnan(h)):
        raise DomainError("lag contains NaN")
    if np.any(h < 0):
        raise DomainError("lag must be >= 0")
    return h


def _correlation(model, h):
    x = h / model.rho
    fam = model.family
    if fam == "exponential":
        return np.exp(-x)
    if fam == "gaussian":
        return np.exp(-(x**2))
    if fam == "spherical":
        return np.where(x < 1.0, 1.0 - 1.5 * x + 0.5 * x**3, 0.0)
    # Matérn, written in logs to keep large nu and large x finite
    nu = model.nu
    out = np.ones_like(x)
    pos = x >= _MATERN_ORIGIN
    if np.any(pos):
        xp = x[pos]
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            k = kv(nu, xp)
            logval = nu * np.log(xp) + np.log(k) - gammaln(nu) - (nu - 1.0) * np.log(2.0)
            val = np.exp(logval)
        val[k == 0.0] = 0.0
        out[pos] = np.minimum(val, 1.0)
    return out


def correlation(model, h):
    """Correlation ``r(h) / sigma2`` at lag(s) ``h``."""
    h = _check_lags(h)
    scalar = h.ndim == 0
    out = _correlation(model, np.atleast_1d(h))
    return float(out[0]) if scalar else out


def covariance(model, h):
    """Covariance ``r(h)`` at lag(s) ``h >= 0``; the nugget is not included."""
    h = _check_lags(h)
    scalar = h.ndim == 0
    out = model.sigma2 * _correlation(model, np.atleast_1d(h))
    return float(out[0]) if scalar else out


def semivariogram(model, h):
    """Semi-variogram ``r(0) - r(h)``."""
    h = _check_lags(h)
    scalar = h.ndim == 0
    out = model.sigma2 * (1.0 - _correlation(model, np.atleast_1d(h)))
    return float(out[0]) if scalar else out


def taper(spec, h):
    """Taper weight ``T_theta(h)``; exactly zero for ``h >= theta``."""
    h = _check_lags(h)
    scalar = h.ndim == 0
    x = np.atleast_1d(h) / spec.theta
    base = np.clip(1.0 - x, 0.0, None)
    if spec.kind == "spherical":
        out = base**2 * (1.0 + 0.5 * x)
    elif spec.kind == "wendland1":
        out = base**4 * (1.0 + 4.0 * x)
    else:
        out = base**6 * (1.0 + 6.0 * x + 35.0 / 3.0 * x**2)
    out = np.where(x >= 1.0, 0.0, out)
    return float(out[0]) if scalar else out


def distance_matrix(a, b=None):
    a = as_locations(a)
    b = a if b is None else as_locations(b)
    if a.shape[1] != b.shape[1]:
        raise DomainError("location sets have different dimensions")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def cov_from_distances(model, dist, nugget_diagonal=True):
    """Dense covariance matrix from a precomputed square distance matrix."""
    S = model.sigma2 * _correlation(model, np.asarray(dist, dtype=float))
    if nugget_diagonal and model.nugget:
        S[np.diag_indices_from(S)] += model.nugget
    return S


def build_cov_matrix(model, locs, taper_spec=None):
    """Covariance matrix of the field at ``locs``.

    Without a taper the result is a dense symmetric array. With a taper the
    result is a ``scipy.sparse.csr_matrix`` holding exactly the pairs closer
    than ``taper_spec.theta`` (plus the diagonal). The nugget is added to the
    diagonal and is never tapered.
    """
    locs = as_locations(locs)
    n = locs.shape[0]
    if n == 0:
        raise DomainError("no locations given")
    if taper_spec is None:
        S = cov_from_distances(model, distance_matrix(locs), nugget_diagonal=False)
        S = 0.5 * (S + S.T)
        S[np.diag_indices(n)] = model.sigma2 + model.nugget
        return S
    i, j, h = _pairs_within(locs, locs, taper_spec.theta, upper_only=True)
    vals = covariance(model, h) * taper(taper_spec, h)
    diag = np.full(n, model.sigma2 + model.nugget)
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    data = np.concatenate([vals, vals, diag])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def cross_cov_matrix(model, locs_a, locs_b, taper_spec=None):
    """Covariance between two location sets (no nugget).

    Dense unless a taper is given, in which case only pairs closer than
    ``theta`` are stored.
    """
    a = as_locations(locs_a)
    b = as_locations(locs_b)
    if taper_spec is None:
        return cov_from_distances(model, distance_matrix(a, b), nugget_diagonal=False)
    i, j, h = _pairs_within(a, b, taper_spec.theta, upper_only=False)
    vals = covariance(model, h) * taper(taper_spec, h)
    return sp.csr_matrix((vals, (i, j)), shape=(a.shape[0], b.shape[0]))


def _pairs_within(a, b, theta, upper_only):
    ta = cKDTree(a)
    if upper_only:
        pairs = ta.query_pairs(theta, output_type="ndarray")
        i, j = pairs[:, 0], pairs[:, 1]
    else:
        tb = cKDTree(b)
        hits = ta.query_ball_tree(tb, theta)
        i = np.repeat(np.arange(len(hits)), [len(x) for x in hits])
        j = np.fromiter((k for x in hits for k in x), dtype=np.intp, count=i.size)
    if i.size == 0:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty, np.zeros(0)
    h = np.sqrt(np.sum((a[i] - b[j]) ** 2, axis=1))
    keep = h < theta
    return i[keep], j[keep], h[keep]


def check_positive_definite(M):
    """Test a symmetric matrix for positive definiteness.

    Returns ``(True, factor)`` when a symmetric factorization succeeds,
    ``(False, None)`` otherwise. For dense input ``factor`` is the lower
    Cholesky factor; for sparse input it is a :class:`SparseCholesky`.

    Pivots down to ``-1e-10 * trace(M) / n`` are accepted as round-off, in
    which case the factor is built from the clipped pivots.
    """
    if sp.issparse(M):
        M = sp.csr_matrix(M, dtype=float)
        n = M.shape[0]
        if M.shape != (n, n):
            raise DomainError("matrix must be square")
        scale = abs(M).max() if M.nnz else 0.0
        if n and abs(M - M.T).max() > 1e-10 * scale:
            raise DomainError("matrix is not symmetric")
        try:
            return True, SparseCholesky(M)
        except NumericalError:
            return False, None
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.ndim != 2 or M.shape != (n, n):
        raise DomainError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix has non-finite entries")
    scale = np.abs(M).max() if n else 0.0
    if np.abs(M - M.T).max(initial=0.0) > 1e-10 * scale:
        raise DomainError("matrix is not symmetric")
    try:
        return True, np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    tol = 1e-10 * np.trace(M) / n
    lu, d, perm = spl.ldl(M, lower=True)
    offdiag = np.abs(np.diag(d, -1)).max(initial=0.0)
    pivots = np.diag(d)
    if offdiag > 0 or pivots.min() <= -abs(tol):
        return False, None
    return True, lu * np.sqrt(np.clip(pivots, 0.0, None))

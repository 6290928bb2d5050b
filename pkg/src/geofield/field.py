"""
Dense Gaussian-field model: joint observation model, simulation and kriging.

The latent field at the prediction sites is ``X = B_x beta + eta`` with
``eta ~ N(0, Sigma)``. Observations are ``Y = A X + eps`` where ``A`` picks
one prediction site per observation, or, when the observed sites are not
prediction sites, the same model is written directly over the observed
locations with ``B_y`` supplied by the caller.

Kriging flavours:

* simple kriging: ``p = 0`` (known zero mean) or a known ``beta``;
* universal kriging: ``beta`` estimated by GLS and its uncertainty added to
  the prediction variance;
* ordinary kriging: universal kriging with ``B`` a column of ones, see
  :func:`ordinary`.

All solves go through Cholesky factors; no inverse is formed.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _linalg
from ._sparse import SparseCholesky
from .covmodel import (
    CovarianceModel,
    as_locations,
    build_cov_matrix,
    check_positive_definite,
    cross_cov_matrix,
)
from .errors import DomainError, EstimationError, NumericalError


def _design(B, n, what):
    if B is None:
        return np.zeros((n, 0))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != n:
        raise DomainError(f"{what} must have {n} rows, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise DomainError(f"{what} has non-finite entries")
    return B


@dataclass(frozen=True, eq=False)
class GaussianFieldModel:
    """Latent field over the prediction sites.

    ``B`` is the ``n_x x p`` covariate matrix; ``None`` means ``p = 0``
    (known zero mean).
    """

    locs: np.ndarray
    cov: CovarianceModel
    B: np.ndarray = None

    def __post_init__(self):
        locs = as_locations(self.locs)
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "B", _design(self.B, locs.shape[0], "B_x"))

    @property
    def n(self):
        return self.locs.shape[0]

    @property
    def p(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed values with their sites, covariates and noise variance.

    ``index`` (optional) lists, for every observation, the prediction site
    it observes; it defines the 0/1 observation matrix ``A``.
    """

    locs: np.ndarray
    Y: np.ndarray
    B: np.ndarray = None
    sigma_eps2: float = 0.0
    index: np.ndarray = None

    def __post_init__(self):
        locs = as_locations(self.locs)
        Y = np.asarray(self.Y, dtype=float).ravel()
        if Y.shape[0] != locs.shape[0]:
            raise DomainError(f"Y has {Y.shape[0]} values for {locs.shape[0]} sites")
        if not np.all(np.isfinite(Y)):
            raise DomainError("Y has non-finite entries")
        s2 = float(self.sigma_eps2)
        if not np.isfinite(s2) or s2 < 0:
            raise DomainError(f"sigma_eps2 must be >= 0, got {s2}")
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "B", _design(self.B, Y.shape[0], "B_y"))
        object.__setattr__(self, "sigma_eps2", s2)
        if self.index is not None:
            idx = np.asarray(self.index, dtype=np.intp).ravel()
            if idx.shape[0] != Y.shape[0]:
                raise DomainError("index must have one entry per observation")
            object.__setattr__(self, "index", idx)

    @classmethod
    def at_sites(cls, fm, index, Y, sigma_eps2=0.0):
        """Observations of prediction sites ``index`` of ``fm``
        (so ``B_y = A B_x``)."""
        idx = np.asarray(index, dtype=np.intp).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= fm.n):
            raise DomainError("observation index out of range")
        return cls(fm.locs[idx], Y, fm.B[idx], sigma_eps2, idx)

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    def with_values(self, Y):
        return ObservationSet(self.locs, Y, self.B, self.sigma_eps2, self.index)

    def observation_matrix(self, n_sites):
        """Sparse 0/1 matrix ``A`` (requires ``index``)."""
        if self.index is None:
            raise DomainError("observations are not tied to prediction sites")
        rows = np.arange(self.n)
        return sp.csr_matrix((np.ones(self.n), (rows, self.index)), shape=(self.n, n_sites))


@dataclass(frozen=True, eq=False)
class KrigingResult:
    mean: np.ndarray
    variance: np.ndarray
    beta_hat: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    beta_cov: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 0)))


def ordinary(locs, cov):
    """Prediction model whose mean is an unknown constant."""
    locs = as_locations(locs)
    return GaussianFieldModel(locs, cov, np.ones((locs.shape[0], 1)))


def _check_pair(fm, obs):
    if obs.p != fm.p:
        raise DomainError(f"B_y has {obs.p} columns but B_x has {fm.p}")
    if obs.locs.shape[1] != fm.locs.shape[1]:
        raise DomainError("observed and prediction sites differ in dimension")
    if obs.index is not None and obs.index.size and obs.index.max() >= fm.n:
        raise DomainError("observation index out of range")


def covariance_blocks(fm, obs):
    """Return ``(Sigma_xx, Sigma_xy, Sigma_yy)``.

    With an observation index these are ``Sigma``, ``Sigma A^T`` and
    ``A Sigma A^T + I sigma_eps2``; otherwise the cross block is computed
    from distances between the two site sets.
    """
    _check_pair(fm, obs)
    Sxx = build_cov_matrix(fm.cov, fm.locs)
    if obs.index is not None:
        Sxy = Sxx[:, obs.index]
        Syy = Sxx[np.ix_(obs.index, obs.index)].copy()
    else:
        Sxy = cross_cov_matrix(fm.cov, fm.locs, obs.locs)
        Syy = build_cov_matrix(fm.cov, obs.locs)
    Syy[np.diag_indices_from(Syy)] += obs.sigma_eps2
    return Sxx, Sxy, Syy


def joint_model(fm, obs, beta):
    """Mean and covariance of ``Z = [X; Y]``."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != fm.p:
        raise DomainError(f"beta has length {beta.shape[0]}, expected {fm.p}")
    Sxx, Sxy, Syy = covariance_blocks(fm, obs)
    mu = np.concatenate([fm.B @ beta, obs.B @ beta])
    Sz = np.block([[Sxx, Sxy], [Sxy.T, Syy]])
    return mu, Sz


def simulate(fm, beta=None, seed=None):
    """One realization of ``X = B_x beta + eta`` by direct factorization."""
    beta = np.zeros(fm.p) if beta is None else np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != fm.p:
        raise DomainError(f"beta has length {beta.shape[0]}, expected {fm.p}")
    ok, L = check_positive_definite(build_cov_matrix(fm.cov, fm.locs))
    if not ok:
        raise NumericalError("covariance matrix is not positive definite; raise the nugget")
    rng = np.random.default_rng(seed)
    return fm.B @ beta + L @ rng.standard_normal(fm.n)


def krige_matrices(Sxx_diag, Sxy, Syy, Y, B_x=None, B_y=None, beta=None):
    """Kriging from explicit covariance blocks.

    Parameters
    ----------
    Sxx_diag : array (n_x,)
        Prior variances at the prediction sites.
    Sxy : array (n_x, n_y)
    Syy : array (n_y, n_y)
        Covariance of the observations, noise included.
    Y : array (n_y,)
    B_x, B_y : arrays or None
        Covariates; ``None`` means ``p = 0``.
    beta : array or None
        Known regression coefficients (simple kriging with a known mean).
        When omitted and ``p > 0``, ``beta`` is estimated by GLS and its
        uncertainty is added to the variance.
    """
    Sxx_diag = np.asarray(Sxx_diag, dtype=float)
    Sxy = np.asarray(Sxy, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n_x = Sxx_diag.shape[0]
    B_x = _design(B_x, n_x, "B_x")
    B_y = _design(B_y, Y.shape[0], "B_y")
    L = _linalg.cholesky(np.asarray(Syy, dtype=float), "Sigma_yy")
    Yw = _linalg.lower_solve(L, Y)
    Bw = _linalg.lower_solve(L, B_y)
    V = _linalg.lower_solve(L, Sxy.T)
    universal = beta is None and B_x.shape[1] > 0
    if beta is None:
        beta, beta_cov, _ = _linalg.gls_whitened(Bw, Yw)
    else:
        beta = np.asarray(beta, dtype=float).ravel()
        beta_cov = np.zeros((beta.size, beta.size))
    mean = B_x @ beta + V.T @ (Yw - Bw @ beta)
    var = Sxx_diag - np.sum(V**2, axis=0)
    if universal:
        H = B_x - V.T @ Bw
        var = var + np.einsum("ij,jk,ik->i", H, beta_cov, H)
    var = _linalg.clamp_variance(var, scale=Sxx_diag.max(initial=1.0))
    return KrigingResult(mean, var, beta, beta_cov)


def krige(fm, obs, beta=None):
    """Simple, ordinary or universal kriging of ``X`` given ``obs``."""
    Sxx, Sxy, Syy = covariance_blocks(fm, obs)
    return krige_matrices(np.diag(Sxx).copy(), Sxy, Syy, obs.Y, fm.B, obs.B, beta)


def taper_krige(fm, obs, taper_spec, beta=None, block=512):
    """Kriging with a tapered, sparse covariance.

    Same estimator as :func:`krige` but ``Sigma_yy`` and ``Sigma_xy`` are
    tapered and only sparse factorizations are used.
    """
    _check_pair(fm, obs)
    cov = fm.cov
    Syy = build_cov_matrix(cov, obs.locs, taper_spec)
    Syy = (Syy + obs.sigma_eps2 * sp.identity(obs.n, format="csr")).tocsc()
    try:
        F = SparseCholesky(Syy)
    except NumericalError as exc:
        raise NumericalError(f"tapered Sigma_yy is not positive definite: {exc}") from exc
    Sxy = cross_cov_matrix(cov, fm.locs, obs.locs, taper_spec).tocsr()
    universal = beta is None and fm.p > 0
    if beta is None and fm.p > 0:
        SiB = F.solve(obs.B)
        SiY = F.solve(obs.Y)
        # Sigma_yy is PD, so B and its whitened form share their rank
        bad = _linalg.collinear_columns(obs.B)
        if bad:
            raise EstimationError(f"covariate matrix is rank deficient; collinear columns {bad}")
        info = obs.B.T @ SiB
        cf = scipy.linalg.cho_factor(0.5 * (info + info.T), lower=True)
        beta = scipy.linalg.cho_solve(cf, obs.B.T @ SiY)
        beta_cov = scipy.linalg.cho_solve(cf, np.eye(fm.p))
        beta_cov = 0.5 * (beta_cov + beta_cov.T)
    elif beta is None:
        beta = np.zeros(0)
        beta_cov = np.zeros((0, 0))
    else:
        beta = np.asarray(beta, dtype=float).ravel()
        beta_cov = np.zeros((beta.size, beta.size))
    resid = obs.Y - obs.B @ beta
    alpha = F.solve(resid)
    mean = fm.B @ beta + Sxy @ alpha
    prior = cov.sigma2 + cov.nugget
    var = np.empty(fm.n)
    SiBy = F.solve(obs.B) if universal else None
    for start in range(0, fm.n, block):
        stop = min(start + block, fm.n)
        Sblk = Sxy[start:stop].toarray().T  # n_y x m
        W = F.solve(Sblk)
        var[start:stop] = prior - np.sum(Sblk * W, axis=0)
        if universal:
            H = fm.B[start:stop] - W.T @ obs.B
            var[start:stop] += np.einsum("ij,jk,ik->i", H, beta_cov, H)
    var = _linalg.clamp_variance(var, scale=prior)
    return KrigingResult(mean, var, beta, beta_cov)

"""
Linear-Gaussian spatio-temporal state-space model::

    X_t = D X_{t-1} + nu_t,     nu_t  ~ N(0, Sigma_nu)
    Y_t = C X_t + eps_t,        eps_t ~ N(0, Sigma_eps)

with ``X_0 ~ N(x0_mean, x0_cov)``. Row ``t`` of a state or observation
matrix holds time ``t = 0, ..., T-1``; ``Y_0`` observes ``X_0``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericalError


def _psd(M, what):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DomainError(f"{what} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > 1e-10 * scale:
        raise DomainError(f"{what} is not symmetric")
    M = 0.5 * (M + M.T)
    lo = np.linalg.eigvalsh(M).min() if M.size else 0.0
    if lo < -1e-10 * scale:
        raise DomainError(f"{what} must be positive semi-definite")
    return M


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """State-space model with time-constant matrices.

    ``Sigma_eps`` may be singular for simulation; filtering needs every
    innovation covariance ``C P C^T + Sigma_eps`` to be positive definite.

    Stability is not enforced; :attr:`spectral_radius` and :attr:`stable`
    report it.
    """

    D: np.ndarray
    Sigma_nu: np.ndarray
    C_obs: np.ndarray
    Sigma_eps: np.ndarray
    x0_mean: np.ndarray
    x0_cov: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = D.shape[0]
        if D.shape != (n, n):
            raise DomainError(f"D must be square, got shape {D.shape}")
        Snu = _psd(self.Sigma_nu, "Sigma_nu")
        C = np.atleast_2d(np.asarray(self.C_obs, dtype=float))
        if C.shape[1] != n:
            raise DomainError(f"C_obs must have {n} columns, got shape {C.shape}")
        # PSD suffices for simulation; the filter checks the innovation covariance
        Seps = _psd(self.Sigma_eps, "Sigma_eps")
        m0 = np.asarray(self.x0_mean, dtype=float).ravel()
        P0 = _psd(self.x0_cov, "x0_cov")
        if Snu.shape != (n, n) or P0.shape != (n, n) or m0.shape != (n,):
            raise DomainError("Sigma_nu, x0_cov and x0_mean must match the state dimension")
        if Seps.shape != (C.shape[0],) * 2:
            raise DomainError("Sigma_eps must match the observation dimension")
        for k, v in dict(D=D, Sigma_nu=Snu, C_obs=C, Sigma_eps=Seps, x0_mean=m0, x0_cov=P0).items():
            object.__setattr__(self, k, v)

    @property
    def n(self):
        return self.D.shape[0]

    @property
    def m(self):
        return self.C_obs.shape[0]

    @property
    def spectral_radius(self):
        return float(np.abs(np.linalg.eigvals(self.D)).max())

    @property
    def stable(self):
        return self.spectral_radius < 1.0

    @classmethod
    def scalar(cls, d, sigma_nu2, sigma_eps2, n=1, x0_mean=0.0, x0_var=None):
        """``D = d I`` with iid noise and ``C = I``; ``x0_var`` defaults to the
        stationary variance when ``|d| < 1`` and to ``sigma_nu2`` otherwise."""
        if x0_var is None:
            x0_var = sigma_nu2 / (1.0 - d * d) if abs(d) < 1 else sigma_nu2
        eye = np.eye(n)
        return cls(d * eye, sigma_nu2 * eye, eye, sigma_eps2 * eye,
                   np.full(n, float(x0_mean)), x0_var * eye)


def _draw(rng, cov, size):
    # eigen square root tolerates singular (PSD) covariances
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((size, cov.shape[0])) @ root.T


def simulate_dynamics(model, T, seed=None):
    """Simulate ``T`` time steps; returns ``(X, Y)`` of shapes ``(T, n)`` and
    ``(T, m)``."""
    T = int(T)
    if T < 1:
        raise DomainError("T must be >= 1")
    rng = np.random.default_rng(seed)
    x0 = model.x0_mean + _draw(rng, model.x0_cov, 1)[0]
    nu = _draw(rng, model.Sigma_nu, T)
    eps = _draw(rng, model.Sigma_eps, T)
    X = np.empty((T, model.n))
    X[0] = x0
    for t in range(1, T):
        X[t] = model.D @ X[t - 1] + nu[t]
    Y = X @ model.C_obs.T + eps
    return X, Y


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Per-time filtered ``(X_t | Y_0..t)`` and predicted ``(X_t | Y_0..t-1)``
    moments, plus the total log-likelihood of the observations."""

    mean: np.ndarray
    cov: np.ndarray
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    loglik: float


def _sym(M):
    return 0.5 * (M + M.T)


def kalman_filter(model, Ys):
    """Exact filtering of ``Ys`` (shape ``(T, m)``).

    Rows that are entirely NaN are treated as missing (prediction only).
    """
    Ys = np.asarray(Ys, dtype=float)
    if Ys.ndim == 1:
        Ys = Ys[:, None]
    if Ys.ndim != 2 or Ys.shape[1] != model.m:
        raise DomainError(f"Ys must have {model.m} columns, got shape {Ys.shape}")
    T, n = Ys.shape[0], model.n
    D, C, Snu, Seps = model.D, model.C_obs, model.Sigma_nu, model.Sigma_eps
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    pmeans = np.empty((T, n))
    pcovs = np.empty((T, n, n))
    m, P = model.x0_mean, model.x0_cov
    loglik = 0.0
    for t in range(T):
        if t > 0:
            m = D @ m
            P = _sym(D @ P @ D.T + Snu)
        pmeans[t], pcovs[t] = m, P
        y = Ys[t]
        if not np.all(np.isnan(y)):
            if np.any(np.isnan(y)):
                raise DomainError(f"row {t} of Ys is partially missing")
            S = _sym(C @ P @ C.T + Seps)
            try:
                cf = scipy.linalg.cho_factor(S, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"innovation covariance is not positive definite at t={t}") from exc
            r = y - C @ m
            PCt = P @ C.T
            Kt = scipy.linalg.cho_solve(cf, PCt.T).T
            m = m + Kt @ r
            # Joseph form keeps P PSD under round-off
            IKC = np.eye(n) - Kt @ C
            P = _sym(IKC @ P @ IKC.T + Kt @ Seps @ Kt.T)
            quad = r @ scipy.linalg.cho_solve(cf, r)
            logdet = 2.0 * np.log(np.diag(cf[0])).sum()
            loglik += -0.5 * (quad + logdet + r.size * np.log(2.0 * np.pi))
        means[t], covs[t] = m, P
    return FilterResult(means, covs, pmeans, pcovs, float(loglik))

import numpy as np
import scipy.linalg as spl

from .errors import EstimationError, NumericalError


def cholesky(S, what="covariance matrix"):
    """Lower Cholesky factor, raising :class:`NumericalError` on failure."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"{what} is not positive definite; increase the nugget or noise variance"
        ) from exc


def lower_solve(L, b):
    return spl.solve_triangular(L, b, lower=True, check_finite=False)


def collinear_columns(Bw, rtol=1e-10):
    """Indices of columns of ``Bw`` that are (numerically) linear combinations
    of the others, found by column-pivoted QR."""
    if Bw.shape[1] == 0:
        return []
    _, R, piv = spl.qr(Bw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return sorted(int(c) for c in piv)
    rank = int(np.sum(d > rtol * d[0]))
    if Bw.shape[0] < Bw.shape[1]:
        rank = min(rank, Bw.shape[0])
    return sorted(int(c) for c in piv[rank:])


def gls_whitened(Bw, Yw):
    """GLS estimate from whitened design ``Bw = L^{-1} B`` and ``Yw = L^{-1} Y``.

    Returns ``(beta_hat, beta_cov, chol_of_information)``.
    """
    p = Bw.shape[1]
    if p == 0:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
    bad = collinear_columns(Bw)
    if bad:
        raise EstimationError(
            f"covariate matrix is rank deficient; collinear columns {bad}"
        )
    info = Bw.T @ Bw
    info = 0.5 * (info + info.T)
    try:
        cf = spl.cho_factor(info, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("B^T Sigma^-1 B is not positive definite") from exc
    beta = spl.cho_solve(cf, Bw.T @ Yw)
    beta_cov = spl.cho_solve(cf, np.eye(p))
    return beta, 0.5 * (beta_cov + beta_cov.T), np.tril(cf[0])


def clamp_variance(var, scale=1.0, what="prediction variance"):
    """Clip round-off negatives to zero; ``scale`` is the prior variance level."""
    var = np.asarray(var, dtype=float)
    tol = 1e-10 * max(1.0, float(scale))
    if var.size and var.min() < -tol:
        raise NumericalError(f"{what} is negative ({var.min():.3e}) beyond round-off")
    return np.clip(var, 0.0, None)

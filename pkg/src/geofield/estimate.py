"""
Covariance parameter estimation.

Two routes are provided:

* least squares on a binned empirical semi-variogram
  (:func:`empirical_variogram`, :func:`fit_variogram_ls`);
* likelihood maximisation (:func:`fit`) with ``beta`` profiled out, using
  either the profile log-likelihood or the restricted (REML) likelihood
  of error contrasts.

Log-likelihood values here omit the ``-(n/2) log(2 pi)`` constant.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _linalg
from .covmodel import (
    CovarianceModel,
    cov_from_distances,
    distance_matrix,
    semivariogram,
)
from .errors import DomainError, EstimationError, NumericalError
from .field import krige_matrices, covariance_blocks

PARAMS = ("sigma2", "rho", "nu", "nugget")


class DegenerateFitWarning(RuntimeWarning):
    """The fitted model sits on a parameter bound (e.g. a flat variogram)."""


@dataclass(frozen=True, eq=False)
class EmpiricalVariogram:
    """Binned semi-variance estimates.

    Bins with ``pair_count == 0`` hold ``gamma_hat = 0`` and are excluded
    from fitting (see :attr:`occupied`).
    """

    bin_edges: np.ndarray
    bin_centers: np.ndarray
    gamma_hat: np.ndarray
    pair_count: np.ndarray

    @property
    def occupied(self):
        return self.pair_count > 0


@dataclass(frozen=True, eq=False)
class LikelihoodEvaluation:
    theta: CovarianceModel
    value: float
    beta_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class FitResult:
    model: CovarianceModel
    beta_hat: np.ndarray
    value: float
    criterion: str
    n_params: int
    converged: bool = True


def ols_residuals(Y, B):
    if B.shape[1] == 0:
        return Y.copy()
    beta, *_ = np.linalg.lstsq(B, Y, rcond=None)
    return Y - B @ beta


def empirical_variogram(obs, n_bins=15, max_lag=None, bin_edges=None):
    """Binned empirical semi-variogram of OLS residuals.

    Every pair contributes ``0.5 * (w_i - w_j)**2`` to the bin holding its
    distance. Bins are ``[e0, e1], (e1, e2], ...``: a pair on an interior
    edge goes to the lower bin and the first bin includes its left edge.
    By default there are ``n_bins`` equal bins from 0 to half the largest
    pairwise distance.
    """
    if obs.n < 2:
        raise DomainError("need at least two observations")
    w = ols_residuals(obs.Y, obs.B)
    i, j = np.triu_indices(obs.n, k=1)
    h = np.sqrt(np.sum((obs.locs[i] - obs.locs[j]) ** 2, axis=1))
    sq = 0.5 * (w[i] - w[j]) ** 2
    if bin_edges is None:
        if max_lag is None:
            max_lag = 0.5 * h.max()
        if not max_lag > 0:
            raise EstimationError("max_lag must be positive (all sites coincide?)")
        bin_edges = np.linspace(0.0, max_lag, int(n_bins) + 1)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be a strictly increasing sequence")
    inside = (h >= edges[0]) & (h <= edges[-1])
    if not np.any(inside):
        raise EstimationError("no pair of observations falls inside the lag range")
    idx = np.searchsorted(edges, h[inside], side="left") - 1
    idx = np.clip(idx, 0, edges.size - 2)
    nb = edges.size - 1
    counts = np.bincount(idx, minlength=nb)
    sums = np.bincount(idx, weights=sq[inside], minlength=nb)
    gamma = np.divide(sums, counts, out=np.zeros(nb), where=counts > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return EmpiricalVariogram(edges, centers, gamma, counts)


def _model_from(family, values):
    return CovarianceModel(family, **values)


def _variogram_curve(model, h):
    return semivariogram(model, h) + model.nugget * (h > 0)


def fit_variogram_ls(
    ev,
    family,
    fixed=None,
    nu=0.5,
    fit_nugget=False,
    fit_nu=False,
    weighted=False,
    n_starts=5,
    seed=0,
):
    """Least-squares fit of a parametric semi-variogram to ``ev``.

    Minimises ``sum (gamma(h; theta) - gamma_hat)**2`` over occupied bins
    (weighted by pair counts when ``weighted``), by multi-start Nelder-Mead
    on log-parameters. ``fixed`` pins parameters by name; ``sigma2`` and
    ``rho`` are free unless pinned, ``nugget`` and ``nu`` only when
    requested.

    Raises
    ------
    EstimationError
        If no start converges; ``best`` holds the best model found.
    """
    fixed = dict(fixed or {})
    occ = ev.occupied
    h = ev.bin_centers[occ]
    g = ev.gamma_hat[occ]
    wts = ev.pair_count[occ].astype(float) if weighted else np.ones(h.size)
    free = [p for p in ("sigma2", "rho") if p not in fixed]
    if fit_nugget and "nugget" not in fixed:
        free.append("nugget")
    if fit_nu and "nu" not in fixed:
        free.append("nu")
    if h.size < len(free) + 1:
        raise EstimationError(
            f"{h.size} occupied bins are too few to fit {len(free)} parameters"
        )
    base = dict(sigma2=1.0, rho=1.0, nu=nu, nugget=0.0)
    base.update({k: float(v) for k, v in fixed.items()})

    scale = float(g.max())
    hmax = float(ev.bin_edges[-1])
    hmin = float(h.min()) if h.min() > 0 else hmax / (10 * h.size)
    if scale <= 0:
        sill = 1e-10
        warnings.warn(
            "empirical variogram is identically zero; sigma2 set to its lower bound",
            DegenerateFitWarning,
            stacklevel=2,
        )
        base.setdefault("sigma2", sill)
        base["sigma2"] = fixed.get("sigma2", sill)
        if "rho" not in fixed:
            base["rho"] = hmax
        return _model_from(family, base)

    bounds = {
        "sigma2": (1e-10 * scale, 1e3 * scale),
        "rho": (1e-3 * hmin, 1e2 * hmax),
        "nugget": (1e-10 * scale, 1e3 * scale),
        "nu": (0.05, 20.0),
    }
    lo = np.log([bounds[p][0] for p in free])
    hi = np.log([bounds[p][1] for p in free])
    norm = scale**2 * wts.sum()

    def objective(z):
        vals = dict(base)
        vals.update(zip(free, np.exp(z)))
        model = _model_from(family, vals)
        r = _variogram_curve(model, h) - g
        return float(np.sum(wts * r**2) / norm)

    guess = {"sigma2": scale, "rho": hmax / 3, "nugget": 0.1 * scale, "nu": nu}
    factors = [
        {"sigma2": 1.0, "rho": 1.0},
        {"sigma2": 0.5, "rho": 0.3},
        {"sigma2": 2.0, "rho": 3.0},
        {"sigma2": 1.0, "rho": 0.1},
        {"sigma2": 1.5, "rho": 1.0},
    ]
    rng = np.random.default_rng(seed)
    starts = []
    for k in range(n_starts):
        f = factors[k] if k < len(factors) else {}
        z = np.log([guess[p] * f.get(p, np.exp(rng.normal(0, 0.5))) for p in free])
        starts.append(np.clip(z, lo, hi))
    best, converged = _multistart(objective, starts, lo, hi)
    vals = dict(base)
    vals.update(zip(free, np.exp(best.x)))
    model = _model_from(family, vals)
    if not converged:
        raise EstimationError("variogram fit did not converge", best=model)
    at_bound = np.isclose(best.x, lo, atol=1e-6) | np.isclose(best.x, hi, atol=1e-6)
    if np.any(at_bound):
        warnings.warn(
            f"fitted {[p for p, b in zip(free, at_bound) if b]} on a bound",
            DegenerateFitWarning,
            stacklevel=2,
        )
    return model


def _nelder_mead(objective, z0, lo, hi):
    return minimize(
        objective,
        z0,
        method="Nelder-Mead",
        bounds=list(zip(lo, hi)),
        options=dict(xatol=1e-8, fatol=1e-9, maxiter=2000 * len(z0), maxfev=4000 * len(z0)),
    )


def _multistart(objective, starts, lo, hi):
    """Run Nelder-Mead from each start, restart once from the best point.

    Results are reduced in start order so the outcome is deterministic.
    """
    results = [_nelder_mead(objective, z, lo, hi) for z in starts]
    finite = [r for r in results if np.isfinite(r.fun)]
    if not finite:
        return results[0], False
    best = min(finite, key=lambda r: r.fun)
    polish = _nelder_mead(objective, best.x, lo, hi)
    if polish.fun <= best.fun:
        polish.success = polish.success or best.success
        best = polish
    converged = any(r.success for r in finite) or bool(best.success)
    return best, converged


def gls_beta(Sigma_yy, B_y, Y):
    """Generalised least squares ``beta_hat`` and its covariance.

    ``beta_hat = (B^T S^-1 B)^-1 B^T S^-1 Y``, ``beta_cov = (B^T S^-1 B)^-1``.
    """
    L = _linalg.cholesky(np.asarray(Sigma_yy, dtype=float), "Sigma_yy")
    B = np.asarray(B_y, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Bw = _linalg.lower_solve(L, B)
    Yw = _linalg.lower_solve(L, np.asarray(Y, dtype=float))
    beta, cov, _ = _linalg.gls_whitened(Bw, Yw)
    return beta, cov


def _as_model(theta, family):
    if isinstance(theta, CovarianceModel):
        return theta
    if family is None:
        raise DomainError("family is required when theta is not a CovarianceModel")
    if isinstance(theta, dict):
        return CovarianceModel(family, **theta)
    return CovarianceModel(family, *theta)


def _loglik(S, obs, reml):
    """``(value, beta_hat)`` for covariance ``S`` of ``obs.Y``; ``-inf`` if ``S``
    is not PD."""
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return -np.inf, np.full(obs.p, np.nan)
    Yw = _linalg.lower_solve(L, obs.Y)
    Bw = _linalg.lower_solve(L, obs.B)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    beta, _, C = _linalg.gls_whitened(Bw, Yw)
    r = Yw - Bw @ beta
    value = -0.5 * logdet - 0.5 * float(r @ r)
    if reml and obs.p:
        value -= float(np.sum(np.log(np.diag(C))))
    return value, beta


def _obs_cov(model, obs, dist=None):
    if dist is None:
        dist = distance_matrix(obs.locs)
    S = cov_from_distances(model, dist)
    S[np.diag_indices_from(S)] += obs.sigma_eps2
    return S


def profile_loglik(theta, obs, family=None):
    """Profile log-likelihood ``-1/2 log|S| - 1/2 Y^T P Y`` with
    ``P = S^-1 - S^-1 B (B^T S^-1 B)^-1 B^T S^-1``.

    ``S`` is the covariance of ``theta`` at the observed sites plus
    ``obs.sigma_eps2`` on the diagonal. Returns ``value = -inf`` when ``S``
    is not positive definite.
    """
    model = _as_model(theta, family)
    value, beta = _loglik(_obs_cov(model, obs), obs, reml=False)
    return LikelihoodEvaluation(model, value, beta)


def reml_loglik(theta, obs, family=None):
    """Restricted log-likelihood: the profile value minus
    ``1/2 log|B^T S^-1 B|``.

    Raises :class:`EstimationError` when ``p >= n`` (no error contrasts).
    """
    if obs.p >= obs.n:
        raise EstimationError(f"p = {obs.p} >= n = {obs.n}: no error contrasts remain")
    model = _as_model(theta, family)
    value, beta = _loglik(_obs_cov(model, obs), obs, reml=True)
    return LikelihoodEvaluation(model, value, beta)


def fit(
    obs,
    family=None,
    criterion="ml",
    init=None,
    bounds=None,
    free=None,
    n_starts=5,
    seed=0,
):
    """Maximum-likelihood or REML fit of the covariance parameters.

    Parameters
    ----------
    obs : ObservationSet
    family : str, optional
        Covariance family; taken from ``init`` when omitted.
    criterion : {"ml", "reml"}
    init : CovarianceModel, optional
        Starting point. Defaults to a variogram least-squares fit.
    bounds : dict, optional
        ``name -> (low, high)`` for free parameters. Defaults to three
        decades either side of ``init``.
    free : sequence of str, optional
        Parameters to estimate. Defaults to ``sigma2``, ``rho`` and, when
        ``init.nugget > 0``, ``nugget``.
    n_starts : int
        Number of Nelder-Mead starts (the first is ``init``). A single
        free parameter is fitted by bounded Brent search instead.

    Returns
    -------
    FitResult
        Fitted model, GLS ``beta_hat`` at the optimum and the maximised
        objective value.
    """
    crit = criterion.lower()
    if crit not in ("ml", "reml"):
        raise DomainError(f"criterion must be 'ml' or 'reml', got {criterion!r}")
    if crit == "reml" and obs.p >= obs.n:
        raise EstimationError(f"p = {obs.p} >= n = {obs.n}: no error contrasts remain")
    if init is None:
        if family is None:
            raise DomainError("give a family or an initial model")
        ev = empirical_variogram(obs)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateFitWarning)
            init = fit_variogram_ls(ev, family, fit_nugget=True)
    elif family is not None and init.family != CovarianceModel(family, 1, 1).family:
        raise DomainError("family and init.family disagree")
    if free is None:
        free = ["sigma2", "rho"] + (["nugget"] if init.nugget > 0 else [])
    free = list(free)
    for p in free:
        if p not in PARAMS:
            raise DomainError(f"unknown parameter {p!r}")
    start = {p: getattr(init, p) for p in free}
    bnds = {p: (start[p] / 1e3, start[p] * 1e3) for p in free}
    if "nu" in bnds:
        bnds["nu"] = (0.05, 20.0)
    bnds.update(bounds or {})
    for p in free:
        lo_, hi_ = bnds[p]
        if not (0 < lo_ <= start[p] <= hi_):
            raise DomainError(f"init {p}={start[p]} is outside bounds {bnds[p]}")
    lo = np.log([bnds[p][0] for p in free])
    hi = np.log([bnds[p][1] for p in free])
    dist = distance_matrix(obs.locs)
    reml = crit == "reml"

    def model_at(z):
        return init.replace(**dict(zip(free, np.exp(z))))

    def negloglik(z):
        try:
            model = model_at(z)
        except DomainError:
            return np.inf
        value, _ = _loglik(_obs_cov(model, obs, dist), obs, reml)
        return -value

    z0 = np.log([start[p] for p in free])
    trace = []
    if len(free) == 1:
        res = minimize_scalar(
            lambda t: negloglik(np.array([t])),
            bounds=(lo[0], hi[0]),
            method="bounded",
            options=dict(xatol=1e-10),
        )
        # the bounded search never evaluates the endpoints or the start
        cands = [(res.fun, res.x), (negloglik(z0), z0[0])]
        fun, x = min(cands, key=lambda c: c[0])
        zbest = np.array([x])
        converged = bool(res.success) and np.isfinite(fun)
        trace.append(fun)
    else:
        rng = np.random.default_rng(seed)
        starts = [z0] + [
            np.clip(z0 + rng.normal(0.0, 0.7, size=z0.size), lo, hi)
            for _ in range(max(n_starts, 1) - 1)
        ]
        best, converged = _multistart(negloglik, starts, lo, hi)
        fun, zbest = best.fun, best.x
        trace.append(fun)
    if not np.isfinite(fun):
        raise EstimationError("likelihood is -inf at every start", trace=trace)
    model = model_at(zbest)
    value, beta = _loglik(_obs_cov(model, obs, dist), obs, reml)
    return FitResult(model, beta, value, crit, len(free) + obs.p, converged)


def aic_bic(loglik, n_params, n_obs):
    """``(AIC, BIC)`` = ``(-2 l + 2 k, -2 l + k log n)``."""
    if n_obs < 1:
        raise DomainError("n_obs must be >= 1")
    aic = -2.0 * loglik + 2.0 * n_params
    bic = -2.0 * loglik + np.log(n_obs) * n_params
    return aic, bic


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    weights: np.ndarray
    log_posterior: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    conditional_means: np.ndarray
    conditional_variances: np.ndarray


def posterior_grid(fm, obs, theta_grid, log_prior=None, likelihood="reml"):
    """Posterior over a finite grid of covariance models, and the mixture
    prediction.

    Each grid model gets weight proportional to ``exp(l(theta) + log_prior(theta))``
    (normalised after subtracting the maximum). Points where the likelihood
    is ``-inf`` get weight zero. The mixture variance is the weighted mean
    of the conditional variances plus the spread of the conditional means.

    ``likelihood`` is ``"reml"`` (integrates out a flat prior on ``beta``;
    reduces to the profile likelihood when ``p = 0``) or ``"profile"``.
    """
    grid = list(theta_grid)
    if not grid:
        raise DomainError("theta_grid is empty")
    if likelihood not in ("reml", "profile"):
        raise DomainError("likelihood must be 'reml' or 'profile'")
    reml = likelihood == "reml"
    logpost = np.full(len(grid), -np.inf)
    means = np.zeros((len(grid), fm.n))
    variances = np.zeros((len(grid), fm.n))
    for k, model in enumerate(grid):
        lp = 0.0 if log_prior is None else float(log_prior(model))
        o = obs
        value, _ = _loglik(_obs_cov(model, o), o, reml)
        if not np.isfinite(value) or not np.isfinite(lp):
            continue
        fk = type(fm)(fm.locs, model, fm.B)
        try:
            Sxx, Sxy, Syy = covariance_blocks(fk, obs)
            res = krige_matrices(np.diag(Sxx).copy(), Sxy, Syy, obs.Y, fk.B, obs.B)
        except NumericalError:
            continue
        logpost[k] = value + lp
        means[k] = res.mean
        variances[k] = res.variance
    if not np.any(np.isfinite(logpost)):
        raise EstimationError("every grid point has zero posterior weight")
    shifted = logpost - np.max(logpost)
    w = np.exp(shifted)
    total = w.sum()
    if not total > 0:
        raise EstimationError("posterior weights underflow; rescale the log prior")
    w = w / total
    mean = w @ means
    var = w @ variances + w @ (means - mean) ** 2
    return PosteriorGrid(w, logpost, mean, var, means, variances)

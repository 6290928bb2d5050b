"""
Low-rank representations ``X = Psi w`` with ``w ~ N(0, Sigma_w)`` and
``r << n`` basis functions.

Basis constructions: multiresolution bisquare functions (fixed-rank
kriging), predictive-process knots and discretised process convolution.
Prediction goes through the ``r x r`` system only, by the matrix inversion
lemma.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spl
from scipy.special import gamma as gamma_fn, kv

from . import _linalg
from .covmodel import (
    CovarianceModel,
    as_locations,
    build_cov_matrix,
    cross_cov_matrix,
    distance_matrix,
)
from .errors import DomainError, EstimationError, NumericalError


@dataclass(frozen=True, eq=False)
class LowRankModel:
    """``Psi`` (prediction sites x r), ``Psi_y`` (observed sites x r),
    coefficient covariance ``Sigma_w`` and noise variance ``sigma_eps2``.

    A 1-d ``Sigma_w`` is read as a diagonal and kept in that form, which
    keeps fine process-convolution grids cheap.
    """

    Psi: np.ndarray
    Psi_y: np.ndarray
    Sigma_w: np.ndarray
    sigma_eps2: float

    def __post_init__(self):
        Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        Psi_y = np.atleast_2d(np.asarray(self.Psi_y, dtype=float))
        Sw = np.asarray(self.Sigma_w, dtype=float)
        if Sw.ndim == 1:
            r = Sw.size
            if r and Sw.min() < 0:
                raise DomainError(f"Sigma_w is not PSD (smallest diagonal entry {Sw.min():.3e})")
        else:
            Sw = np.atleast_2d(Sw)
            r = Sw.shape[0]
            if Sw.shape != (r, r):
                raise DomainError("Sigma_w must be square")
            if np.abs(Sw - Sw.T).max(initial=0.0) > 1e-10 * max(np.abs(Sw).max(initial=0.0), 1.0):
                raise DomainError("Sigma_w is not symmetric")
            Sw = 0.5 * (Sw + Sw.T)
            if r:
                lam = np.linalg.eigvalsh(Sw)
                if lam.min() < -1e-10 * max(np.trace(Sw), 0.0) / r - 1e-300:
                    raise DomainError(f"Sigma_w is not PSD (smallest eigenvalue {lam.min():.3e})")
        if Psi.shape[1] != r or Psi_y.shape[1] != r:
            raise DomainError("basis matrices and Sigma_w disagree on the rank")
        if float(self.sigma_eps2) < 0:
            raise DomainError("sigma_eps2 must be >= 0")
        object.__setattr__(self, "Psi", Psi)
        object.__setattr__(self, "Psi_y", Psi_y)
        object.__setattr__(self, "Sigma_w", Sw)
        object.__setattr__(self, "sigma_eps2", float(self.sigma_eps2))

    @property
    def rank(self):
        return self.Sigma_w.shape[0]

    @property
    def diagonal(self):
        return self.Sigma_w.ndim == 1

    def sigma_w_matrix(self):
        return np.diag(self.Sigma_w) if self.diagonal else self.Sigma_w

    def sigma_w_apply(self, X):
        """``Sigma_w @ X``."""
        if self.diagonal:
            return self.Sigma_w.reshape((-1,) + (1,) * (np.ndim(X) - 1)) * X
        return self.Sigma_w @ X

    def implied_covariance(self, which="x"):
        P = self.Psi if which == "x" else self.Psi_y
        return P @ self.sigma_w_apply(P.T)


def bisquare(dist, radius):
    """``(1 - (d/radius)^2)^2`` inside the radius, 0 outside."""
    x = np.asarray(dist, dtype=float) / radius
    return np.where(x <= 1.0, (1.0 - x**2) ** 2, 0.0)


def bisquare_basis(sites, resolutions):
    """Multiresolution bisquare basis matrix.

    For each resolution (an array of centre locations) the support radius
    is ``1.5`` times the shortest distance between its centres. Columns are
    ordered resolution by resolution.
    """
    sites = as_locations(sites)
    cols = []
    for level, centers in enumerate(resolutions):
        centers = as_locations(centers)
        if centers.shape[0] < 2:
            raise DomainError(f"resolution {level} needs at least two centres")
        D = distance_matrix(centers)
        D[np.diag_indices_from(D)] = np.inf
        spacing = D.min()
        if not spacing > 0:
            raise DomainError(f"resolution {level} has duplicate centres")
        cols.append(bisquare(distance_matrix(sites, centers), 1.5 * spacing))
    return np.hstack(cols)


def regular_centers(locs, n_per_side):
    """Regular grid of ``n_per_side`` points per axis spanning the bounding
    box of ``locs`` (used for bisquare centres and predictive-process knots)."""
    locs = as_locations(locs)
    axes = [np.linspace(lo, hi, int(n_per_side)) for lo, hi in zip(locs.min(0), locs.max(0))]
    mesh = np.meshgrid(*axes, indexing="xy")
    return np.column_stack([m.ravel() for m in mesh])


def psd_project(S):
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues set to 0)."""
    S = 0.5 * (S + S.T)
    lam, U = np.linalg.eigh(S)
    out = (U * np.clip(lam, 0.0, None)) @ U.T
    return 0.5 * (out + out.T)


def frk_estimate_sigma_w(Sigma_yy_hat, Psi_binned, Sigma_eps):
    """Method-of-moments ``Sigma_w`` for fixed-rank kriging.

    With ``Psi_binned = Q R`` (thin QR) the estimate is
    ``R^-1 Q^T (Sigma_yy_hat - Sigma_eps) Q R^-T``, projected onto the PSD
    cone. ``Sigma_eps`` may be a matrix, a vector (its diagonal) or a scalar.
    """
    P = np.asarray(Psi_binned, dtype=float)
    S = np.asarray(Sigma_yy_hat, dtype=float)
    n, r = P.shape
    if S.shape != (n, n):
        raise DomainError("Sigma_yy_hat must be n x n with n = rows of Psi_binned")
    E = np.asarray(Sigma_eps, dtype=float)
    if E.ndim < 2:
        E = np.diag(np.broadcast_to(E, (n,)).astype(float))
    Q, R = np.linalg.qr(P)
    d = np.abs(np.diag(R))
    if r > n or d.min() <= 1e-12 * d.max():
        raise EstimationError("binned basis matrix is not of full column rank")
    M = Q.T @ (S - E) @ Q
    X = spl.solve_triangular(R, M, lower=False)
    Sw = spl.solve_triangular(R, X.T, lower=False).T
    return psd_project(Sw)


def empirical_cov_binned(replicates, locs, bin_edges=None, n_bins=15):
    """Sample covariance between sites, averaged within distance bins.

    The diagonal (lag 0) is averaged separately from off-diagonal pairs,
    which are grouped into ``bin_edges`` (default: ``n_bins`` equal bins up
    to the largest distance). Pairs beyond the last edge keep zero.
    """
    Yr = np.asarray(replicates, dtype=float)
    if Yr.ndim != 2 or Yr.shape[0] < 2:
        raise DomainError("need a T x n replicate matrix with T >= 2")
    locs = as_locations(locs)
    n = Yr.shape[1]
    if locs.shape[0] != n:
        raise DomainError("one location per replicate column required")
    C = np.cov(Yr, rowvar=False, ddof=1).reshape(n, n)
    out = np.zeros((n, n))
    out[np.diag_indices(n)] = np.mean(np.diag(C))
    if n == 1:
        return out
    i, j = np.triu_indices(n, k=1)
    D = distance_matrix(locs)
    h = D[i, j]
    if bin_edges is None:
        bin_edges = np.linspace(0.0, h.max() if h.max() > 0 else 1.0, n_bins + 1)
    edges = np.asarray(bin_edges, dtype=float)
    inside = (h >= edges[0]) & (h <= edges[-1])
    b = np.clip(np.searchsorted(edges, h[inside], side="left") - 1, 0, edges.size - 2)
    nb = edges.size - 1
    counts = np.bincount(b, minlength=nb)
    sums = np.bincount(b, weights=C[i[inside], j[inside]], minlength=nb)
    means = np.divide(sums, counts, out=np.zeros(nb), where=counts > 0)
    ii, jj = i[inside], j[inside]
    out[ii, jj] = means[b]
    out[jj, ii] = means[b]
    return out


def _posterior_w_operator(model):
    """Return a function mapping ``Y`` to ``E(w | Y)``.

    Uses ``(Psi^T Psi / s2 + Sigma_w^-1)^-1`` when ``Sigma_w`` is PD and the
    inverse-free form ``Sigma_w (I + Psi^T Psi Sigma_w / s2)^-1`` otherwise.
    """
    s2 = model.sigma_eps2
    if s2 <= 0:
        raise DomainError("sigma_eps2 must be > 0 for low-rank kriging")
    P = model.Psi_y
    Sw = model.sigma_w_matrix()
    PtP = P.T @ P / s2
    try:
        Lw = np.linalg.cholesky(Sw)
    except np.linalg.LinAlgError:
        Lw = None
    if Lw is not None:
        Swinv = spl.cho_solve((Lw, True), np.eye(model.rank))
        A = PtP + Swinv
        cf = spl.cho_factor(0.5 * (A + A.T), lower=True)
        return lambda Y: spl.cho_solve(cf, P.T @ Y / s2)
    warnings.warn(
        "Sigma_w is singular; using the inverse-free form of the update",
        RuntimeWarning,
        stacklevel=3,
    )
    M = np.eye(model.rank) + PtP @ Sw
    lu = spl.lu_factor(M)
    return lambda Y: Sw @ spl.lu_solve(lu, P.T @ Y / s2)


def lowrank_krige(model, Y, return_variance=False):
    """Kriging mean ``Psi_x Sigma_w Psi_y^T (Psi_y Sigma_w Psi_y^T + s2 I)^-1 Y``.

    Only ``r x r`` systems are factorised. With ``return_variance`` the
    pointwise variances of ``Psi_x w`` given ``Y`` are returned too.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] != model.Psi_y.shape[0]:
        raise DomainError("Y length does not match Psi_y")
    post = _posterior_w_operator(model)
    mean = model.Psi @ post(Y)
    if not return_variance:
        return mean
    # Cov(w | Y) = Sigma_w - Sigma_w Psi^T S^-1 Psi Sigma_w
    Sw = model.sigma_w_matrix()
    G = post(model.Psi_y @ Sw)  # Sigma_w Psi^T S^-1 Psi Sigma_w, r x r
    Cw = Sw - G
    Cw = 0.5 * (Cw + Cw.T)
    var = np.einsum("ij,jk,ik->i", model.Psi, Cw, model.Psi)
    return mean, _linalg.clamp_variance(var, scale=np.trace(Sw) or 1.0)


def lowrank_krige_dense(model, Y):
    """Reference path: forms and factorises the ``n_y x n_y`` covariance."""
    S = model.implied_covariance("y")
    S[np.diag_indices_from(S)] += model.sigma_eps2
    L = _linalg.cholesky(S, "Psi Sigma_w Psi^T + Sigma_eps")
    alpha = spl.cho_solve((L, True), np.asarray(Y, dtype=float))
    return model.Psi @ model.sigma_w_apply(model.Psi_y.T @ alpha)


@dataclass(frozen=True, eq=False)
class KnotSet:
    """Knot locations and the parent covariance among them."""

    locations: np.ndarray
    Sigma_star: np.ndarray


def knot_set(parent, locations):
    """Knots with ``Sigma_star`` from the parent model (nugget excluded)."""
    locs = as_locations(locations)
    D = distance_matrix(locs)
    D[np.diag_indices_from(D)] = np.inf
    if locs.shape[0] > 1 and D.min() == 0:
        raise DomainError("duplicate knots make Sigma_star singular")
    smooth = parent.replace(nugget=0.0)
    S = build_cov_matrix(smooth, locs)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Sigma_star is not positive definite") from exc
    return KnotSet(locs, S)


def predictive_process(parent, knots, sites, obs_sites=None, sigma_eps2=None):
    """Predictive-process low-rank model of ``parent``.

    Rows of ``Psi`` are ``Sigma_u^T Sigma_star^-1`` and ``Sigma_w =
    Sigma_star``, so the implied covariance is
    ``Sigma_u^T Sigma_star^-1 Sigma_u``. ``obs_sites`` defaults to
    ``sites``; ``sigma_eps2`` defaults to the parent's nugget.
    """
    if not isinstance(knots, KnotSet):
        knots = knot_set(parent, knots)
    sites = as_locations(sites)
    obs_sites = sites if obs_sites is None else as_locations(obs_sites)
    smooth = parent.replace(nugget=0.0)
    L = np.linalg.cholesky(knots.Sigma_star)

    def basis(u):
        Su = cross_cov_matrix(smooth, knots.locations, u)  # r x n
        return spl.cho_solve((L, True), Su).T

    s2 = parent.nugget if sigma_eps2 is None else sigma_eps2
    return LowRankModel(basis(sites), basis(obs_sites), knots.Sigma_star, s2)


# ---------------------------------------------------------------------------
# process convolution


@dataclass(frozen=True, eq=False)
class ConvolutionKernel:
    """Isotropic smoothing kernel placed on a regular grid of cells.

    ``centers`` are the cell centres ``s_j`` and ``cell_size`` the cell edge
    length, so each cell has measure ``cell_size**d``. The Matérn kernel is
    ``amplitude * (|s|/scale)^nu K_nu(|s|/scale)``; convolving it with
    itself gives a Matérn covariance of smoothness ``2 nu + d/2``.
    ``family="constant"`` is ``amplitude`` on ``|s| <= scale``.
    """

    family: str
    scale: float
    centers: np.ndarray
    cell_size: float
    amplitude: float = 1.0
    nu: float = None

    def __post_init__(self):
        fam = str(self.family).lower()
        if fam not in ("gaussian", "matern", "constant"):
            raise DomainError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not self.scale > 0 or not self.cell_size > 0:
            raise DomainError("scale and cell_size must be > 0")
        object.__setattr__(self, "centers", as_locations(self.centers))
        if fam == "matern":
            if self.nu is None or not self.nu > 0:
                raise DomainError(
                    "Matérn kernel needs nu > 0; nu <= 0 gives a singular kernel"
                )
            if not self.field_smoothness > self.dim / 2:
                raise DomainError("implied field smoothness must exceed d/2")
        elif self.nu is not None and fam != "matern":
            raise DomainError("nu applies to Matérn kernels only")

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def cell_measure(self):
        return self.cell_size**self.dim

    @property
    def field_smoothness(self):
        """Smoothness of the implied Matérn covariance, ``2 nu + d/2``."""
        if self.family != "matern":
            return np.inf
        return 2.0 * self.nu + self.dim / 2.0

    def __call__(self, s):
        """Kernel value at displacement(s) ``s`` (last axis is the dimension)."""
        s = np.asarray(s, dtype=float)
        r = np.sqrt(np.sum(s**2, axis=-1)) / self.scale
        if self.family == "gaussian":
            return self.amplitude * np.exp(-(r**2))
        if self.family == "constant":
            return np.where(r <= 1.0, self.amplitude, 0.0)
        nu = self.nu
        out = np.full(r.shape, self.amplitude * gamma_fn(nu) * 2.0 ** (nu - 1.0))
        pos = r > 1e-12
        with np.errstate(under="ignore"):
            out[pos] = self.amplitude * r[pos] ** nu * kv(nu, r[pos])
        return out

    def support_radius(self, rtol=1e-16):
        """Radius beyond which the kernel is below ``rtol`` times its peak."""
        if self.family == "constant":
            return self.scale
        if self.family == "gaussian":
            return self.scale * np.sqrt(np.log(1.0 / rtol))
        peak = self(np.zeros(self.dim))
        r = self.scale
        while self(np.array([r] + [0.0] * (self.dim - 1))) > rtol * peak:
            r *= 1.25
        return r


def kernel_grid(sites, scale, cell_size, margin=3.0):
    """Cell centres covering the bounding box of ``sites`` plus
    ``margin * scale`` on every side."""
    sites = as_locations(sites)
    pad = margin * scale
    axes = []
    for lo, hi in zip(sites.min(0) - pad, sites.max(0) + pad):
        n = int(np.ceil((hi - lo) / cell_size))
        mid = 0.5 * (lo + hi)
        axes.append(mid + (np.arange(n) - (n - 1) / 2.0) * cell_size)
    mesh = np.meshgrid(*axes, indexing="xy")
    return np.column_stack([m.ravel() for m in mesh])


def _subcell_offsets(d, cell_size, n_sub=4):
    ticks = ((np.arange(n_sub) + 0.5) / n_sub - 0.5) * cell_size
    mesh = np.meshgrid(*([ticks] * d), indexing="xy")
    return np.column_stack([m.ravel() for m in mesh])


def convolution_basis(kernel, sites, obs_sites=None, sigma_eps2=0.0, n_sub=4):
    """Discretised process convolution as a low-rank model.

    ``Psi[i, j]`` is the average of ``k(s - u_i)`` over cell ``j``
    (midpoint rule on ``n_sub`` subcells per axis) and the weights are
    independent with variance equal to the cell measure (``Sigma_w`` is
    returned as its diagonal).
    """
    sites = as_locations(sites)
    obs_sites = sites if obs_sites is None else as_locations(obs_sites)
    C = kernel.centers
    if sites.shape[1] != kernel.dim:
        raise DomainError("sites and kernel grid differ in dimension")
    margin = 3.0 * kernel.scale - 0.5 * kernel.cell_size
    allsites = np.vstack([sites, obs_sites])
    if np.any(allsites.min(0) - margin < C.min(0) - 1e-9) or np.any(
        allsites.max(0) + margin > C.max(0) + 1e-9
    ):
        raise DomainError("kernel grid must cover the sites with a margin of 3 kernel scales")
    offs = _subcell_offsets(kernel.dim, kernel.cell_size, n_sub)

    def basis(u):
        out = np.zeros((u.shape[0], C.shape[0]))
        for o in offs:
            out += kernel((C + o)[None, :, :] - u[:, None, :])
        return out / offs.shape[0]

    Sw = np.full(C.shape[0], kernel.cell_measure)
    return LowRankModel(basis(sites), basis(obs_sites), Sw, sigma_eps2)


def kernel_self_convolution(kernel, lag_grid, extent=None, rtol=1e-6, max_refine=6):
    """Covariance ``r = k * k`` at the lags in ``lag_grid`` via the FFT.

    The kernel is sampled on a periodic grid, transformed, squared and
    transformed back; lags are taken along the first axis. The sampling
    step starts at the lag spacing and is halved until the result changes
    by less than ``rtol`` relative to ``r(0)``.

    ``extent`` is the half-width of the periodic sampling window; it must
    hold the kernel support plus the largest lag so that wrap-around never
    overlaps (the default is exactly that).
    """
    lags = np.asarray(lag_grid, dtype=float)
    if lags.ndim != 1 or lags.size < 2:
        raise DomainError("lag_grid must be a 1-d grid with at least two lags")
    steps = np.diff(lags)
    step = steps[0]
    if not step > 0 or not np.allclose(steps, step, rtol=1e-9, atol=0):
        raise DomainError("lag_grid must be uniform and increasing")
    k_idx = np.rint(lags / step).astype(int)
    if not np.allclose(k_idx * step, lags, rtol=0, atol=1e-9 * step):
        raise DomainError("lag_grid must lie on multiples of its spacing")
    R = kernel.support_radius()
    hmax = np.abs(lags).max()
    need = R + hmax
    if extent is None:
        extent = need
    elif extent < need:
        raise DomainError(
            f"kernel support ({R:.3g}) plus largest lag ({hmax:.3g}) exceeds the grid"
        )
    d = kernel.dim

    def evaluate(refine):
        dx = step / refine
        m = int(np.ceil(extent / dx))
        n = 2 * m
        ax = (np.arange(n) - m) * dx
        ax = np.fft.ifftshift(ax)  # put s = 0 at index 0
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        s = np.stack(mesh, axis=-1)
        k = kernel(s)
        F = np.fft.rfftn(k)
        r = np.fft.irfftn(F * F, s=k.shape, axes=tuple(range(d))) * dx**d
        idx = (k_idx * refine) % n
        sel = (idx,) + (0,) * (d - 1)
        return r[sel]

    refine = 1
    prev = evaluate(refine)
    for _ in range(max_refine):
        refine *= 2
        cur = evaluate(refine)
        if np.max(np.abs(cur - prev)) <= rtol * abs(cur[np.argmin(np.abs(lags))] or 1.0):
            return cur
        prev = cur
    raise NumericalError("FFT convolution did not converge under grid refinement")

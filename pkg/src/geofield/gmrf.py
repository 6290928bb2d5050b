"""
Gaussian Markov random fields from the SPDE ``(kappa^2 - Laplacian)^(alpha/2) Z = tau W``
on a regular 2-d grid.

With the lumped mass matrix ``C = h^2 I``, the 5-point stiffness ``G``
(centre 4, neighbours -1) and ``K = kappa^2 C + G`` the precision is::

    alpha = 1:   Q = K / tau^2
    alpha = 2:   Q = K C^-1 K / tau^2
    alpha >= 3:  Q_alpha = K C^-1 Q_{alpha-2} C^-1 K   (unit tau), then / tau^2

The ``1/tau^2`` factor is applied once, to the final matrix. The operator is
assembled on a grid padded by ``pad`` cells per side to push boundary
effects away from the requested nodes; those are the "interior" nodes.
Nodes are numbered row-major, row 0 at the bottom (south).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._sparse import SparseCholesky
from .errors import DomainError, NumericalError


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of ``n_rows x n_cols`` nodes with spacing ``h``.

    ``pad`` extra cells per side are used during assembly; ``None`` lets
    :func:`precision` pick ``ceil(2 / (kappa h))``. ``x0, y0`` is the
    lower-left corner of the grid (node centres sit half a cell inside).
    """

    n_rows: int
    n_cols: int
    h: float = 1.0
    pad: int = None
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if int(self.n_rows) < 3 or int(self.n_cols) < 3:
            raise DomainError("grid needs at least 3 rows and 3 columns")
        if not float(self.h) > 0:
            raise DomainError("grid spacing must be > 0")
        if self.pad is not None and int(self.pad) < 0:
            raise DomainError("pad must be >= 0")
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))
        object.__setattr__(self, "h", float(self.h))
        if self.pad is not None:
            object.__setattr__(self, "pad", int(self.pad))

    @property
    def size(self):
        return self.n_rows * self.n_cols

    @property
    def padded_shape(self):
        p = self.pad or 0
        return self.n_rows + 2 * p, self.n_cols + 2 * p

    def interior_index(self):
        """Padded-grid node numbers of the requested nodes, row-major."""
        p = self.pad or 0
        _, pc = self.padded_shape
        r, c = np.meshgrid(np.arange(self.n_rows) + p, np.arange(self.n_cols) + p, indexing="ij")
        return (r * pc + c).ravel()

    def coordinates(self):
        """Node centres of the requested grid, shape ``(n_rows * n_cols, 2)``."""
        r, c = np.meshgrid(np.arange(self.n_rows), np.arange(self.n_cols), indexing="ij")
        x = self.x0 + (c.ravel() + 0.5) * self.h
        y = self.y0 + (r.ravel() + 0.5) * self.h
        return np.column_stack([x, y])

    def nearest_node(self, xy):
        """Requested-grid node number nearest to each point; raises if a
        point is outside the grid."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        c = np.floor((xy[:, 0] - self.x0) / self.h).astype(int)
        r = np.floor((xy[:, 1] - self.y0) / self.h).astype(int)
        c = np.where(c == self.n_cols, self.n_cols - 1, c)
        r = np.where(r == self.n_rows, self.n_rows - 1, r)
        if np.any((c < 0) | (c >= self.n_cols) | (r < 0) | (r >= self.n_rows)):
            raise DomainError("point outside the grid")
        return r * self.n_cols + c

    def with_pad(self, pad):
        return GridSpec(self.n_rows, self.n_cols, self.h, pad, self.x0, self.y0)


@dataclass(frozen=True)
class SpdeParams:
    alpha: int
    kappa: float
    tau: float = 1.0

    def __post_init__(self):
        if int(self.alpha) != self.alpha or int(self.alpha) < 1:
            raise DomainError("alpha must be an integer >= 1")
        if not float(self.kappa) > 0 or not float(self.tau) > 0:
            raise DomainError("kappa and tau must be > 0")
        object.__setattr__(self, "alpha", int(self.alpha))

    @property
    def nu(self):
        """Matérn smoothness ``alpha - d/2`` for d = 2."""
        return self.alpha - 1.0


class SparsePrecision:
    """Sparse symmetric precision matrix with an eagerly computed factor.

    ``interior`` lists the node numbers exposed to callers (all nodes when
    not given); ``grid`` is kept for reference when the matrix came from
    :func:`precision`.
    """

    def __init__(self, Q, interior=None, grid=None):
        Q = sp.csc_matrix(Q, dtype=float)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise DomainError("precision must be square")
        asym = abs(Q - Q.T).max() if Q.nnz else 0.0
        if asym > 1e-12 * (abs(Q).max() if Q.nnz else 1.0):
            raise DomainError("precision is not symmetric")
        Q = 0.5 * (Q + Q.T)
        Q.sort_indices()
        self.Q = Q.tocsc()
        self.n = n
        self.interior = np.arange(n) if interior is None else np.asarray(interior, dtype=np.intp)
        self.grid = grid
        self.factor = SparseCholesky(self.Q)

    def toarray(self):
        return self.Q.toarray()

    def logdet(self):
        return self.factor.logdet()

    def solve(self, b):
        return self.factor.solve(b)

    def marginal_variances(self):
        """Diagonal of ``Q^-1`` at every node (selected inversion)."""
        return self.factor.selected_inverse_diag()


def assemble_mass_stiffness(grid):
    """Lumped mass diagonal and 5-point stiffness on the padded grid.

    Returns ``(C_diag, G)`` with ``C_diag`` all ``h^2`` and ``G`` having 4
    on the diagonal and -1 for each of the (up to four) axis neighbours;
    rows at the outer edge simply lose their missing neighbours.
    """
    pr, pc = grid.padded_shape
    N = pr * pc
    C_diag = np.full(N, grid.h**2)
    idx = np.arange(N).reshape(pr, pc)
    right = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    up = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    i = np.concatenate([right[0], right[1], up[0], up[1]])
    j = np.concatenate([right[1], right[0], up[1], up[0]])
    off = sp.csr_matrix((-np.ones(i.size), (i, j)), shape=(N, N))
    G = (off + 4.0 * sp.identity(N, format="csr")).tocsr()
    return C_diag, G


def default_pad(kappa, h):
    return int(math.ceil(2.0 / (kappa * h)))


def precision(params, grid):
    """SPDE precision on ``grid`` (padded) as a :class:`SparsePrecision`."""
    if grid.pad is None:
        grid = grid.with_pad(default_pad(params.kappa, grid.h))
    C_diag, G = assemble_mass_stiffness(grid)
    N = C_diag.size
    Cinv = sp.diags(1.0 / C_diag)
    K = (params.kappa**2 * sp.diags(C_diag) + G).tocsr()
    if params.alpha % 2 == 1:
        Q = K
    else:
        Q = (K @ Cinv @ K).tocsr()
    for _ in range((params.alpha - 1) // 2):
        Q = (K @ Cinv @ Q @ Cinv @ K).tocsr()
    Q = Q / params.tau**2
    Q.eliminate_zeros()
    try:
        return SparsePrecision(Q, interior=grid.interior_index(), grid=grid)
    except NumericalError as exc:
        raise NumericalError(f"SPDE precision failed to factorize: {exc}") from exc


def sample(prec, seed=None, size=None, full=False):
    """Draw from ``N(0, Q^-1)`` by back substitution with the factor.

    Returns the interior nodes unless ``full``; ``size`` draws give an
    array of shape ``(size, n)``.
    """
    rng = np.random.default_rng(seed)
    if size is None:
        z = rng.standard_normal(prec.n)
    else:
        z = rng.standard_normal((size, prec.n)).T
    x = prec.factor.whiten_solve(z)
    if size is not None:
        x = x.T
    if full:
        return x
    return x[..., prec.interior]


@dataclass(frozen=True, eq=False)
class GmrfPrediction:
    mean: np.ndarray
    variance: np.ndarray
    beta_hat: np.ndarray
    beta_cov: np.ndarray


def gmrf_conditional(prec, obs_nodes, Y, sigma_eps2, B=None, beta=None, mean=None):
    """Conditional mean and marginal variances of the field given data.

    Observations are ``Y = X[obs_nodes] + eps`` with ``obs_nodes``
    numbering the interior nodes and ``X = B beta + w``, ``w ~ N(0, Q^-1)``.

    * ``sigma_eps2 > 0``: noise is absorbed into the precision,
      ``Q_post = Q + A^T A / sigma_eps2``; one sparse factorization gives
      the mean and, by selected inversion, the variances.
    * ``sigma_eps2 == 0``: exact conditioning, ``X_u | X_o ~
      N(mu_u - Q_uu^-1 Q_uo (x_o - mu_o), Q_uu^-1)``.

    ``B`` (interior nodes x p) with ``beta=None`` estimates ``beta`` by GLS
    and adds its uncertainty to the variances; ``mean`` gives a known
    prior mean instead. Results are for the interior nodes.
    """
    obs_nodes = np.asarray(obs_nodes, dtype=np.intp).ravel()
    Y = np.asarray(Y, dtype=float).ravel()
    if obs_nodes.size != Y.size:
        raise DomainError("one node per observation is required")
    n_int = prec.interior.size
    if obs_nodes.size and (obs_nodes.min() < 0 or obs_nodes.max() >= n_int):
        raise DomainError("observation node out of range")
    if sigma_eps2 < 0:
        raise DomainError("sigma_eps2 must be >= 0")
    N = prec.n
    full_obs = prec.interior[obs_nodes]
    if B is None:
        B = np.zeros((n_int, 0))
    B = np.asarray(B, dtype=float).reshape(n_int, -1)
    p = B.shape[1]
    mu_int = np.zeros(n_int) if mean is None else np.asarray(mean, dtype=float).ravel()
    if Y.size == 0:
        var = prec.marginal_variances()[prec.interior]
        m = mu_int + (B @ beta if beta is not None and p else 0.0)
        return GmrfPrediction(m, var, np.zeros(0), np.zeros((0, 0)))

    if sigma_eps2 > 0:
        A = sp.csr_matrix((np.ones(Y.size), (np.arange(Y.size), full_obs)), shape=(Y.size, N))
        post = SparsePrecision(prec.Q + (A.T @ A) / sigma_eps2, prec.interior)

        def gain(R):
            # Sigma_xy Sigma_yy^-1 R  =  Q_post^-1 A^T R / s2, on all nodes
            return post.solve(A.T @ R / sigma_eps2)

        var_full = post.marginal_variances()
    else:
        if np.unique(full_obs).size != full_obs.size:
            raise DomainError("noise-free observations must hit distinct nodes")
        free = np.setdiff1d(np.arange(N), full_obs)
        Qcsc = prec.Q.tocsc()
        Quu = Qcsc[free][:, free]
        Quo = Qcsc[free][:, full_obs]
        cond = SparsePrecision(Quu)

        def gain(R):
            out = np.zeros((N,) + R.shape[1:])
            out[free] = -cond.solve(Quo @ R)
            out[full_obs] = R
            return out

        var_full = np.zeros(N)
        var_full[free] = cond.marginal_variances()

    mu_y = mu_int[obs_nodes]
    if p and beta is None:
        By = B[obs_nodes]
        # Sigma_yy^-1 B_y via  (Y - A gain(Y)) structure: S^-1 r = (r - A K r)/s2
        G_B = gain(By)[prec.interior]
        if sigma_eps2 > 0:
            SiB = (By - G_B[obs_nodes]) / sigma_eps2
            G_Y = gain(Y - mu_y)[prec.interior]
            SiY = (Y - mu_y - G_Y[obs_nodes]) / sigma_eps2
        else:
            SiB, SiY = _exact_inverse_apply(prec, full_obs, By), _exact_inverse_apply(
                prec, full_obs, Y - mu_y
            )
        info = By.T @ SiB
        info = 0.5 * (info + info.T)
        try:
            beta_cov = np.linalg.solve(info, np.eye(p))
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariates are collinear at the observed nodes") from exc
        beta_hat = beta_cov @ (By.T @ SiY)
        universal = True
    else:
        beta_hat = np.zeros(p) if beta is None else np.asarray(beta, dtype=float).ravel()
        beta_cov = np.zeros((p, p))
        universal = False
    prior_mean = mu_int + (B @ beta_hat if p else 0.0)
    resid = Y - prior_mean[obs_nodes]
    mean_out = prior_mean + gain(resid)[prec.interior]
    var = var_full[prec.interior].copy()
    if universal:
        H = B - G_B
        var = var + np.einsum("ij,jk,ik->i", H, beta_cov, H)
    var = np.clip(var, 0.0, None)
    return GmrfPrediction(mean_out, var, beta_hat, beta_cov)


def _exact_inverse_apply(prec, full_obs, R):
    """``Sigma_oo^-1 R`` where ``Sigma_oo`` is the marginal covariance of the
    observed nodes: the Schur complement ``Q_oo - Q_ou Q_uu^-1 Q_uo``."""
    N = prec.n
    free = np.setdiff1d(np.arange(N), full_obs)
    Q = prec.Q.tocsc()
    Quu = SparsePrecision(Q[free][:, free])
    Qoo = Q[full_obs][:, full_obs]
    Qou = Q[full_obs][:, free]
    return Qoo @ R - Qou @ Quu.solve(Qou.T @ R)


def calibrate_tau(target_sigma2, alpha, kappa, grid):
    """``tau`` giving a mean interior marginal variance of ``target_sigma2``.

    Marginal variances scale as ``tau^2``, so one reference factorization
    at ``tau = 1`` is enough.
    """
    if not target_sigma2 > 0:
        raise DomainError("target_sigma2 must be > 0")
    ref = precision(SpdeParams(alpha, kappa, 1.0), grid)
    v = ref.marginal_variances()[ref.interior].mean()
    return float(np.sqrt(target_sigma2 / v))

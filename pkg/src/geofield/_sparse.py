"""Sparse symmetric positive-definite factorization.

SuperLU is run in symmetric mode with static pivoting, so with a
symmetric fill-reducing column ordering ``P A P^T = L U`` where
``U = D L^T``. That gives the ``L D L^T`` factor used for solves,
log-determinants, sampling and selected inversion.
"""

import warnings

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError


class SparseCholesky:
    """``L D L^T`` factorization of a sparse symmetric PD matrix.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive-definite matrix.
    ordering : str
        SuperLU column ordering; must be a symmetric one.
    """

    def __init__(self, A, ordering="MMD_AT_PLUS_A"):
        A = sp.csc_matrix(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise NumericalError("matrix must be square")
        self.n = n
        try:
            lu = spla.splu(
                A,
                permc_spec=ordering,
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NumericalError("factorization pivoted off the diagonal; matrix is not PD")
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or d.min() <= 0.0:
            raise NumericalError(
                f"matrix is not positive definite (smallest pivot {d.min():.3e})"
            )
        self._lu = lu
        self.perm = lu.perm_c  # permuted[perm[i]] = original[i]
        self.pivots = d
        L = sp.csc_matrix(lu.L)
        L.sort_indices()
        self.L = L

    @property
    def nnz(self):
        return self.L.nnz

    def solve(self, b):
        """Solve ``A x = b`` (``b`` may be a vector or a matrix)."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def logdet(self):
        return float(np.sum(np.log(self.pivots)))

    def whiten_solve(self, z):
        """Return ``x`` with ``cov(x) = A^{-1}`` when ``z`` is standard normal.

        Solves ``(L D^{1/2})^T y = z`` by back substitution and undoes the
        ordering. ``z`` may have shape ``(n,)`` or ``(n, k)``.
        """
        z = np.asarray(z, dtype=float)
        scale = np.sqrt(self.pivots)
        rhs = z / scale if z.ndim == 1 else z / scale[:, None]
        y = spla.spsolve_triangular(
            self.L.T.tocsr(), rhs, lower=False, unit_diagonal=True
        )
        return y[self.perm]

    def selected_inverse_diag(self):
        """Diagonal of ``A^{-1}`` by the Takahashi recursion on the factor.

        Falls back to column solves (with a warning) if the stored factor
        pattern is not closed under the recursion.
        """
        L = self.L
        zdiag, ok = _takahashi_diag(
            self.n, L.indptr, L.indices, L.data, self.pivots
        )
        if not ok:
            warnings.warn(
                "factor pattern not closed; computing the inverse diagonal by "
                "column solves (O(n) solves)",
                RuntimeWarning,
                stacklevel=2,
            )
            return self.inverse_diag_by_solves()
        return zdiag[self.perm]

    def inverse_diag_by_solves(self, block=256):
        out = np.empty(self.n)
        for start in range(0, self.n, block):
            stop = min(start + block, self.n)
            E = np.zeros((self.n, stop - start))
            E[np.arange(start, stop), np.arange(stop - start)] = 1.0
            X = self.solve(E)
            out[start:stop] = X[np.arange(start, stop), np.arange(stop - start)]
        return out


@numba.njit(cache=True)
def _lookup(indptr, indices, zvals, row, col):
    lo = indptr[col]
    hi = indptr[col + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        r = indices[mid]
        if r == row:
            return zvals[mid], True
        if r < row:
            lo = mid + 1
        else:
            hi = mid
    return 0.0, False


@numba.njit(cache=True)
def _takahashi_diag(n, indptr, indices, data, pivots):
    # zvals mirrors L's strictly-lower pattern (the unit diagonal is stored
    # by SuperLU, so skip it when present).
    zvals = np.zeros(data.shape[0])
    zdiag = np.zeros(n)
    for j in range(n - 1, -1, -1):
        start = indptr[j]
        stop = indptr[j + 1]
        # strictly lower entries of column j
        for p in range(start, stop):
            i = indices[p]
            if i <= j:
                continue
            acc = 0.0
            for q in range(start, stop):
                k = indices[q]
                if k <= j:
                    continue
                if k == i:
                    acc += zdiag[i] * data[q]
                else:
                    if k > i:
                        v, found = _lookup(indptr, indices, zvals, k, i)
                    else:
                        v, found = _lookup(indptr, indices, zvals, i, k)
                    if not found:
                        return zdiag, False
                    acc += v * data[q]
            zvals[p] = -acc
        acc = 0.0
        for p in range(start, stop):
            k = indices[p]
            if k > j:
                acc += data[p] * zvals[p]
        zdiag[j] = 1.0 / pivots[j] - acc
    return zdiag, True

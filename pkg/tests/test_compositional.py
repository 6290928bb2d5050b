import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from geofield.compositional import (
    ZERO_REPLACEMENT,
    CoupledFieldModel,
    closure,
    clr,
    clr_inverse,
    coupled_precision,
    fit_composition_regression,
    replace_zeros,
    synthetic_landcover,
)
from geofield.errors import DomainError, EstimationError
from geofield.gmrf import GridSpec, SparsePrecision, SpdeParams, precision

positive = arrays(float, st.integers(2, 8), elements=st.floats(1e-6, 1e6))


class TestClr:
    def test_uniform(self):
        np.testing.assert_array_equal(clr([1 / 3, 1 / 3, 1 / 3]), 0.0)

    def test_hand_value(self):
        l2 = np.log(2)
        np.testing.assert_allclose(clr([0.5, 0.25, 0.25]), [2 / 3 * l2, -1 / 3 * l2, -1 / 3 * l2], atol=1e-15)

    def test_nonpositive_names_site_and_component(self):
        with pytest.raises(DomainError, match="site 1, component 2"):
            clr([[0.2, 0.3, 0.5], [0.5, 0.5, 0.0]])

    @settings(max_examples=200)
    @given(y=positive, c=st.floats(1e-3, 1e3))
    def test_scale_invariant_and_centered(self, y, c):
        u = clr(y)
        assert abs(u.sum()) <= 1e-12 * max(1.0, np.abs(u).max())
        np.testing.assert_allclose(clr(c * y), u, atol=1e-9)

    def test_round_trip(self, rng):
        y = rng.dirichlet(np.ones(4), size=1000)
        u = clr(y)
        assert np.abs(u.sum(1)).max() <= 1e-12
        np.testing.assert_allclose(clr_inverse(u), y, rtol=0, atol=1e-12)


class TestClrInverse:
    def test_zero(self):
        np.testing.assert_allclose(clr_inverse([0.0, 0.0, 0.0]), 1 / 3, rtol=1e-15)

    @given(u=arrays(float, st.integers(2, 8), elements=st.floats(-700, 700)), c=st.floats(-100, 100))
    def test_simplex_and_shift(self, u, c):
        y = clr_inverse(u)
        assert np.all(y >= 0) and abs(y.sum() - 1) <= 1e-12
        np.testing.assert_allclose(clr_inverse(u + c), y, atol=1e-12)

    def test_no_overflow(self):
        y = clr_inverse([1000.0, 0.0, -1000.0])
        assert np.all(np.isfinite(y)) and y[0] == pytest.approx(1.0)

    def test_non_finite(self):
        with pytest.raises(DomainError):
            clr_inverse([np.nan, 0.0])


class TestZeroReplacement:
    def test_replaces_and_renormalizes(self):
        y = replace_zeros([0.5, 0.5, 0.0])
        assert y[2] == pytest.approx(ZERO_REPLACEMENT / (1 + ZERO_REPLACEMENT))
        assert y.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(np.isfinite(clr(y)))

    def test_negative(self):
        with pytest.raises(DomainError):
            replace_zeros([1.2, -0.2])

    def test_closure(self):
        np.testing.assert_allclose(closure([[2.0, 6.0]]), [[0.25, 0.75]])


class TestRegression:
    def test_exact_linear(self, rng):
        B = np.column_stack([np.ones(40), rng.standard_normal((40, 2))])
        coef = rng.standard_normal((3, 4))
        coef -= coef.mean(1, keepdims=True)
        fit = fit_composition_regression(B @ coef, B)
        np.testing.assert_allclose(fit.coef, coef, atol=1e-10)
        np.testing.assert_allclose(fit.residual_variance, 0.0, atol=1e-20)

    def test_intercept_only(self, rng):
        U = clr(rng.dirichlet(np.ones(3), size=25))
        fit = fit_composition_regression(U, np.ones(25))
        np.testing.assert_allclose(fit.fitted_clr, np.tile(U.mean(0), (25, 1)), atol=1e-12)

    def test_rows_sum_to_zero(self, rng):
        U = rng.standard_normal((30, 3))  # not centred on purpose
        fit = fit_composition_regression(U, np.column_stack([np.ones(30), rng.standard_normal(30)]))
        assert np.abs(fit.fitted_clr.sum(1)).max() <= 1e-12
        assert np.abs(fit.proportions.sum(1) - 1).max() <= 1e-12
        assert np.all(fit.proportions > 0)

    def test_rank_deficient(self, rng):
        B = rng.standard_normal((20, 2))
        with pytest.raises(EstimationError):
            fit_composition_regression(rng.standard_normal((20, 3)), np.column_stack([B, B @ [1.0, 2.0]]))

    def test_row_mismatch(self, rng):
        with pytest.raises(DomainError):
            fit_composition_regression(rng.standard_normal((5, 3)), np.ones(4))

    def test_synthetic_landcover(self):
        lc = synthetic_landcover(n_side=20, k=3, seed=0)
        U = clr(replace_zeros(lc.proportions))
        full = fit_composition_regression(U, lc.covariates)
        null = fit_composition_regression(U, lc.covariates[:, :1])
        truth = clr_inverse(lc.true_clr)
        assert np.abs(full.proportions.sum(1) - 1).max() <= 1e-12
        r_full = np.corrcoef(full.proportions.ravel(), truth.ravel())[0, 1]
        r_null = np.corrcoef(null.proportions.ravel(), truth.ravel())[0, 1]
        assert r_full > r_null and r_full > 0.9


class TestCoupledPrecision:
    def setup_method(self):
        self.Q = precision(SpdeParams(2, 0.8), GridSpec(4, 4, pad=0))

    def test_independent_fields(self):
        P = coupled_precision(CoupledFieldModel(self.Q, 0.0)).precision.toarray()
        q = self.Q.toarray()
        np.testing.assert_array_equal(P, np.block([[q, np.zeros_like(q)], [np.zeros_like(q), q]]))

    @pytest.mark.parametrize("rho", [-0.6, 0.3, 0.9])
    def test_kronecker_covariance(self, rho):
        P = coupled_precision(CoupledFieldModel(self.Q, rho)).precision
        cov = np.linalg.inv(P.toarray())
        expected = np.kron([[1, rho], [rho, 1]], np.linalg.inv(self.Q.toarray()))
        np.testing.assert_allclose(cov, expected, atol=1e-10)
        assert abs(P.Q - P.Q.T).max() == 0

    def test_pattern(self):
        P = coupled_precision(CoupledFieldModel(self.Q, 0.5)).precision.Q
        n = self.Q.n
        pat = (abs(self.Q.Q) > 0).astype(int)
        for blk in (P[:n, :n], P[n:, n:], P[:n, n:]):
            assert ((abs(blk) > 0).astype(int) != pat).nnz == 0

    def test_near_boundary(self):
        out = coupled_precision(CoupledFieldModel(self.Q, 0.999))
        assert np.isfinite(out.precision.logdet())
        assert out.coupling_condition == pytest.approx(1999.0)

    def test_8x8_grid(self):
        Q = precision(SpdeParams(1, 0.5), GridSpec(8, 8, pad=0))
        P = coupled_precision(CoupledFieldModel(Q, -0.4)).precision
        expected = np.kron([[1, -0.4], [-0.4, 1]], np.linalg.inv(Q.toarray()))
        np.testing.assert_allclose(np.linalg.inv(P.toarray()), expected, atol=1e-10)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5, np.nan])
    def test_invalid_rho(self, rho):
        with pytest.raises(DomainError):
            CoupledFieldModel(self.Q, rho)

    def test_generic_precision(self):
        Q = SparsePrecision(sp.diags([2.0, 3.0]))
        P = coupled_precision(CoupledFieldModel(Q, 0.5)).precision
        assert P.n == 4 and P.interior.tolist() == [0, 1, 2, 3]

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.stats import multivariate_normal

from geofield.covmodel import CovarianceModel, build_cov_matrix, semivariogram
from geofield.errors import DomainError, EstimationError
from geofield.estimate import (
    DegenerateFitWarning,
    EmpiricalVariogram,
    aic_bic,
    empirical_variogram,
    fit,
    fit_variogram_ls,
    gls_beta,
    posterior_grid,
    profile_loglik,
    reml_loglik,
)
from geofield.field import GaussianFieldModel, ObservationSet, krige, simulate


def simulated_obs(seed, n=150, model=None, B=None, beta=None, extent=10.0):
    r = np.random.default_rng(seed)
    model = model or CovarianceModel("exponential", 1.0, 1.5)
    locs = r.uniform(0, extent, size=(n, 2))
    fm = GaussianFieldModel(locs, model, B)
    Y = simulate(fm, beta, seed=r)
    return ObservationSet(locs, Y, B)


class TestEmpiricalVariogram:
    def test_constant_values(self, rng):
        obs = ObservationSet(rng.uniform(size=(20, 2)), np.full(20, 3.3))
        ev = empirical_variogram(obs, n_bins=5)
        assert np.all(ev.gamma_hat[ev.occupied] == 0.0)

    def test_hand_enumeration(self):
        obs = ObservationSet([0.0, 1.0, 2.0], [0.0, 1.0, 3.0])
        ev = empirical_variogram(obs, bin_edges=[0.5, 1.5, 2.5])
        np.testing.assert_allclose(ev.gamma_hat, [1.25, 4.5])
        np.testing.assert_array_equal(ev.pair_count, [2, 1])

    def test_edge_pairs_go_to_lower_bin(self):
        obs = ObservationSet([0.0, 1.0, 2.0], [0.0, 1.0, 3.0])
        ev = empirical_variogram(obs, bin_edges=[0.0, 1.0, 2.0])
        np.testing.assert_array_equal(ev.pair_count, [2, 1])

    def test_duplicate_locations(self):
        obs = ObservationSet([0.0, 0.0, 1.0], [1.0, 2.0, 0.0])
        ev = empirical_variogram(obs, bin_edges=[0.0, 0.5, 1.5])
        assert ev.pair_count[0] == 1 and ev.gamma_hat[0] == pytest.approx(0.5)
        ev2 = empirical_variogram(obs, bin_edges=[0.5, 1.5])
        assert ev2.pair_count.sum() == 2

    def test_default_bins(self, rng):
        locs = rng.uniform(0, 10, size=(40, 2))
        ev = empirical_variogram(ObservationSet(locs, rng.standard_normal(40)))
        d = np.sqrt(((locs[:, None] - locs[None]) ** 2).sum(-1)).max()
        assert ev.bin_edges.size == 16 and ev.bin_edges[-1] == pytest.approx(d / 2)

    def test_shift_invariant_with_intercept(self, rng):
        locs = rng.uniform(0, 5, size=(30, 2))
        Y = rng.standard_normal(30)
        B = np.ones((30, 1))
        a = empirical_variogram(ObservationSet(locs, Y, B))
        b = empirical_variogram(ObservationSet(locs, Y + 17.5, B))
        np.testing.assert_allclose(a.gamma_hat, b.gamma_hat, atol=1e-10)

    def test_no_pairs_in_range(self):
        obs = ObservationSet([0.0, 10.0], [0.0, 1.0])
        with pytest.raises(EstimationError):
            empirical_variogram(obs, bin_edges=[0.0, 1.0, 2.0])

    def test_gamma_nonnegative(self, rng):
        ev = empirical_variogram(ObservationSet(rng.uniform(size=(25, 2)), rng.standard_normal(25)))
        assert np.all(ev.gamma_hat >= 0) and np.all(ev.pair_count >= 0)


class TestFitVariogramLS:
    def test_exact_round_trip(self):
        truth = CovarianceModel("exponential", 1.0, 2.0)
        edges = np.linspace(0, 10, 11)
        centers = 0.5 * (edges[1:] + edges[:-1])
        ev = EmpiricalVariogram(edges, centers, semivariogram(truth, centers), np.full(10, 50))
        m = fit_variogram_ls(ev, "exponential")
        assert m.sigma2 == pytest.approx(1.0, rel=1e-6)
        assert m.rho == pytest.approx(2.0, rel=1e-6)

    def test_round_trip_with_nugget(self):
        truth = CovarianceModel("spherical", 2.0, 4.0, nugget=0.3)
        edges = np.linspace(0, 8, 17)
        c = 0.5 * (edges[1:] + edges[:-1])
        g = semivariogram(truth, c) + 0.3
        ev = EmpiricalVariogram(edges, c, g, np.full(16, 10))
        m = fit_variogram_ls(ev, "spherical", fit_nugget=True)
        assert m.nugget == pytest.approx(0.3, rel=1e-5)
        assert m.rho == pytest.approx(4.0, rel=1e-5)

    def test_fixed_parameters(self):
        truth = CovarianceModel("gaussian", 1.5, 2.0)
        edges = np.linspace(0, 6, 9)
        c = 0.5 * (edges[1:] + edges[:-1])
        ev = EmpiricalVariogram(edges, c, semivariogram(truth, c), np.ones(8, int))
        m = fit_variogram_ls(ev, "gaussian", fixed={"sigma2": 1.5})
        assert m.sigma2 == 1.5 and m.rho == pytest.approx(2.0, rel=1e-6)

    def test_all_zero_is_degenerate(self):
        edges = np.linspace(0, 5, 6)
        c = 0.5 * (edges[1:] + edges[:-1])
        ev = EmpiricalVariogram(edges, c, np.zeros(5), np.full(5, 3))
        with pytest.warns(DegenerateFitWarning):
            m = fit_variogram_ls(ev, "exponential")
        assert m.sigma2 <= 1e-10

    def test_too_few_bins(self):
        ev = EmpiricalVariogram(np.array([0, 1.0, 2.0]), np.array([0.5, 1.5]), np.array([0.2, 0.0]), np.array([4, 0]))
        with pytest.raises(EstimationError):
            fit_variogram_ls(ev, "exponential")

    def test_simulated_field(self):
        obs = simulated_obs(3, n=600, model=CovarianceModel("exponential", 1.0, 2.0), extent=20.0)
        m = fit_variogram_ls(empirical_variogram(obs), "exponential")
        assert 0.6 < m.sigma2 < 1.6 and 1.0 < m.rho < 3.5


class TestGlsBeta:
    def test_identity_is_ols(self, rng):
        B = rng.standard_normal((20, 3))
        Y = rng.standard_normal(20)
        beta, cov = gls_beta(np.eye(20), B, Y)
        np.testing.assert_allclose(beta, np.linalg.lstsq(B, Y, rcond=None)[0], atol=1e-12)
        np.testing.assert_allclose(cov, np.linalg.inv(B.T @ B), atol=1e-12)

    def test_mean(self, rng):
        Y = rng.standard_normal(11)
        beta, _ = gls_beta(np.eye(11), np.ones(11), Y)
        assert beta[0] == pytest.approx(Y.mean(), abs=1e-14)

    def test_normal_equations(self, rng):
        A = rng.standard_normal((20, 20))
        S = A @ A.T + 20 * np.eye(20)
        B = rng.standard_normal((20, 2))
        Y = rng.standard_normal(20)
        Si = np.linalg.inv(S)
        ref = np.linalg.solve(B.T @ Si @ B, B.T @ Si @ Y)
        np.testing.assert_allclose(gls_beta(S, B, Y)[0], ref, rtol=1e-10)

    def test_rank_deficient(self, rng):
        B = rng.standard_normal((10, 2))
        with pytest.raises(EstimationError):
            gls_beta(np.eye(10), np.column_stack([B, B[:, 0] + B[:, 1]]), rng.standard_normal(10))


class TestLikelihood:
    def test_zero_mean_is_gaussian_density(self, rng):
        obs = simulated_obs(1, n=30)
        model = CovarianceModel("exponential", 0.8, 1.1, nugget=0.05)
        S = build_cov_matrix(model, obs.locs)
        expected = multivariate_normal(np.zeros(30), S).logpdf(obs.Y) + 15 * np.log(2 * np.pi)
        assert profile_loglik(model, obs).value == pytest.approx(expected, rel=1e-12)

    def test_scalar_hand_formula(self):
        obs = ObservationSet([[0.0, 0.0]], [1.7])
        v = profile_loglik(CovarianceModel("gaussian", 2.5, 1.0), obs).value
        assert v == pytest.approx(-0.5 * np.log(2.5) - 1.7**2 / (2 * 2.5), rel=1e-14)

    def test_theta_tuple(self):
        obs = ObservationSet([[0.0, 0.0]], [1.7])
        assert profile_loglik((2.5, 1.0), obs, family="gaussian").value == pytest.approx(
            profile_loglik(CovarianceModel("gaussian", 2.5, 1.0), obs).value
        )

    def test_profile_matches_numeric_beta_maximum(self, rng):
        n = 25
        locs = rng.uniform(0, 5, size=(n, 2))
        B = np.column_stack([np.ones(n), locs[:, 0]])
        Y = 1.0 + 0.3 * locs[:, 0] + rng.standard_normal(n)
        obs = ObservationSet(locs, Y, B)

        def full_max(model):
            S = build_cov_matrix(model, locs)
            f = lambda b: -multivariate_normal(B @ b, S).logpdf(Y)
            return -minimize(f, np.zeros(2), method="BFGS", options=dict(gtol=1e-10)).fun

        m1 = CovarianceModel("exponential", 1.0, 0.7, nugget=0.2)
        m2 = CovarianceModel("exponential", 1.8, 1.9, nugget=0.1)
        diff_profile = profile_loglik(m1, obs).value - profile_loglik(m2, obs).value
        diff_full = full_max(m1) - full_max(m2)
        assert diff_profile == pytest.approx(diff_full, abs=1e-6)

    def test_reml_extra_term(self, rng):
        obs = simulated_obs(2, n=40, B=np.column_stack([np.ones(40), np.arange(40.0)]), beta=[1, 0.1])
        model = CovarianceModel("exponential", 1.0, 1.5)
        S = build_cov_matrix(model, obs.locs)
        info = obs.B.T @ np.linalg.solve(S, obs.B)
        diff = reml_loglik(model, obs).value - profile_loglik(model, obs).value
        assert diff == pytest.approx(-0.5 * np.linalg.slogdet(info)[1], abs=1e-12)

    def test_reml_saturated(self, rng):
        obs = ObservationSet(rng.uniform(size=(3, 2)), rng.standard_normal(3), np.eye(3))
        with pytest.raises(EstimationError):
            reml_loglik(CovarianceModel("exponential", 1, 1), obs)

    def test_not_pd_is_minus_infinity(self):
        obs = ObservationSet([[0.0, 0.0], [0.0, 0.0]], [0.0, 1.0])
        assert profile_loglik(CovarianceModel("gaussian", 1, 1), obs).value == -np.inf

    def test_iid_closed_forms(self, rng):
        n = 20
        locs = np.column_stack([np.arange(n) * 10.0, np.zeros(n)])
        Y = rng.standard_normal(n) * 1.7 + 4.0
        obs = ObservationSet(locs, Y, np.ones((n, 1)))
        rss = np.sum((Y - Y.mean()) ** 2)
        init = CovarianceModel("spherical", 1.0, 1.0)
        ml = fit(obs, init=init, free=["sigma2"], criterion="ml")
        reml = fit(obs, init=init, free=["sigma2"], criterion="reml")
        assert ml.model.sigma2 == pytest.approx(rss / n, rel=1e-6)
        assert reml.model.sigma2 == pytest.approx(rss / (n - 1), rel=1e-6)


class TestFit:
    def test_init_at_optimum(self, rng):
        n = 20
        locs = np.column_stack([np.arange(n) * 10.0, np.zeros(n)])
        Y = rng.standard_normal(n)
        obs = ObservationSet(locs, Y)
        opt = np.mean(Y**2)
        res = fit(obs, init=CovarianceModel("spherical", opt, 1.0), free=["sigma2"], criterion="ml")
        assert res.model.sigma2 == pytest.approx(opt, rel=1e-6)

    @pytest.mark.slow
    def test_ml_recovery(self):
        # sites dense enough (spacing ~0.5) for short lags to pin the nugget
        truth = CovarianceModel("exponential", 1.0, 1.5, nugget=0.1)
        ests = []
        for seed in range(9):
            obs = simulated_obs(100 + seed, n=400, model=truth, extent=10.0)
            res = fit(obs, family="exponential", criterion="ml", seed=seed)
            ests.append([res.model.sigma2, res.model.rho, res.model.nugget])
        med = np.median(ests, axis=0)
        np.testing.assert_allclose(med, [1.0, 1.5, 0.1], rtol=0.25)

    def test_reml_reduces_nugget_bias(self):
        n, reps, true_nugget = 25, 200, 0.5
        parent = CovarianceModel("exponential", 0.3, 0.2, nugget=true_nugget)
        r = np.random.default_rng(7)
        ml, reml = [], []
        for _ in range(reps):
            locs = r.uniform(0, 10, size=(n, 2))
            B = np.column_stack([np.ones(n), locs])
            fm = GaussianFieldModel(locs, parent, B)
            obs = ObservationSet(locs, simulate(fm, [1.0, 0.2, -0.1], seed=r), B)
            ml.append(fit(obs, init=parent, free=["nugget"], criterion="ml").model.nugget)
            reml.append(fit(obs, init=parent, free=["nugget"], criterion="reml").model.nugget)
        assert abs(np.mean(reml) - true_nugget) < abs(np.mean(ml) - true_nugget)

    def test_bad_criterion(self):
        obs = simulated_obs(0, n=10)
        with pytest.raises(DomainError):
            fit(obs, family="exponential", criterion="mle")

    def test_init_outside_bounds(self):
        obs = simulated_obs(0, n=10)
        with pytest.raises(DomainError):
            fit(obs, init=CovarianceModel("exponential", 1, 1), bounds={"rho": (2.0, 3.0)})

    def test_deterministic(self):
        obs = simulated_obs(4, n=60)
        a = fit(obs, family="exponential", seed=3)
        b = fit(obs, family="exponential", seed=3)
        assert a.model == b.model and a.value == b.value


class TestAicBic:
    def test_extra_parameter(self):
        assert aic_bic(-5.0, 3, 50)[0] - aic_bic(-5.0, 2, 50)[0] == pytest.approx(2.0)

    def test_calculator(self):
        aic, bic = aic_bic(-10.0, 3, 100)
        assert aic == 26.0 and bic == pytest.approx(20 + 3 * np.log(100))

    def test_bic_penalty_crossover(self):
        k = 4
        for n in (8, 50, 1000):
            aic, bic = aic_bic(0.0, k, n)
            assert bic > aic
        aic, bic = aic_bic(0.0, k, 7)
        assert bic < aic

    @given(ll=st.floats(-1e6, 1e6), k=st.integers(0, 50), n=st.integers(1, 10**6))
    def test_difference(self, ll, k, n):
        aic, bic = aic_bic(ll, k, n)
        assert bic - aic == pytest.approx((np.log(n) - 2) * k, abs=1e-6 * max(1, abs(ll)))

    def test_invalid_n(self):
        with pytest.raises(DomainError):
            aic_bic(0.0, 1, 0)


class TestPosteriorGrid:
    def setup_method(self):
        r = np.random.default_rng(11)
        self.obs = simulated_obs(11, n=40, B=np.ones((40, 1)), beta=[2.0])
        self.fm = GaussianFieldModel(r.uniform(0, 10, size=(50, 2)), self.obs_model(), np.ones((50, 1)))

    @staticmethod
    def obs_model(rho=1.5):
        return CovarianceModel("exponential", 1.0, rho, nugget=0.05)

    def test_single_point(self):
        pg = posterior_grid(self.fm, self.obs, [self.obs_model()])
        np.testing.assert_array_equal(pg.weights, [1.0])
        res = krige(self.fm, self.obs)
        np.testing.assert_allclose(pg.mean, res.mean, rtol=1e-12)
        np.testing.assert_allclose(pg.variance, res.variance, rtol=1e-12)

    def test_equal_likelihood(self):
        m = self.obs_model()
        pg = posterior_grid(self.fm, self.obs, [m, m])
        np.testing.assert_allclose(pg.weights, [0.5, 0.5], atol=1e-15)

    def test_total_variance(self):
        grid = [self.obs_model(rho) for rho in (0.5, 1.0, 1.5, 2.5, 4.0)]
        pg = posterior_grid(self.fm, self.obs, grid)
        assert abs(pg.weights.sum() - 1) <= 1e-12
        assert np.all((pg.weights >= 0) & (pg.weights <= 1))
        k = np.argmax(pg.weights)
        assert np.mean(pg.variance >= pg.conditional_variances[k] - 1e-12) >= 0.95

    def test_prior_shifts_weights(self):
        grid = [self.obs_model(rho) for rho in (1.0, 2.0)]
        flat = posterior_grid(self.fm, self.obs, grid)
        tilted = posterior_grid(self.fm, self.obs, grid, log_prior=lambda m: 0.0 if m.rho < 1.5 else -50.0)
        assert tilted.weights[0] > flat.weights[0]

    def test_underflowing_likelihoods_are_rescaled(self):
        grid = [self.obs_model(1.0), self.obs_model(2.0)]
        pg = posterior_grid(self.fm, self.obs, grid, log_prior=lambda m: -1e5)
        assert np.isfinite(pg.weights).all() and pg.weights.sum() == pytest.approx(1.0)

    def test_empty_grid(self):
        with pytest.raises(DomainError):
            posterior_grid(self.fm, self.obs, [])

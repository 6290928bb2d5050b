import numpy as np
import pytest
from scipy.stats import multivariate_normal

from geofield.errors import DomainError, NumericalError
from geofield.sptemporal import DynamicsModel, kalman_filter, simulate_dynamics


def joint_moments(model, T):
    """Mean and covariance of the stacked ``(X_0..X_{T-1}, Y_0..Y_{T-1})``."""
    n, m = model.n, model.m
    D, C = model.D, model.C_obs
    var = [model.x0_cov]
    mean = [model.x0_mean]
    for _ in range(1, T):
        var.append(D @ var[-1] @ D.T + model.Sigma_nu)
        mean.append(D @ mean[-1])
    Sxx = np.zeros((T * n, T * n))
    for s in range(T):
        for t in range(s, T):
            block = np.linalg.matrix_power(D, t - s) @ var[s]
            Sxx[t * n : (t + 1) * n, s * n : (s + 1) * n] = block
            Sxx[s * n : (s + 1) * n, t * n : (t + 1) * n] = block.T
    Cb = np.kron(np.eye(T), C)
    Sxy = Sxx @ Cb.T
    Syy = Cb @ Sxx @ Cb.T + np.kron(np.eye(T), model.Sigma_eps)
    mx = np.concatenate(mean)
    return mx, Cb @ mx, Sxx, Sxy, Syy


def joint_filter(model, Ys):
    """Filtered moments by dense conditioning of ``X_t`` on ``Y_0..Y_t``."""
    T = Ys.shape[0]
    n, m = model.n, model.m
    mx, my, Sxx, Sxy, Syy = joint_moments(model, T)
    means, covs = [], []
    for t in range(T):
        xi = slice(t * n, (t + 1) * n)
        yi = slice(0, (t + 1) * m)
        G = np.linalg.solve(Syy[yi, yi], Sxy[xi, yi].T).T
        means.append(mx[xi] + G @ (Ys[: t + 1].ravel() - my[yi]))
        covs.append(Sxx[xi, xi] - G @ Sxy[xi, yi].T)
    return np.array(means), np.array(covs)


def random_model(r, n=3, m=2):
    A = r.standard_normal((n, n))
    D = 0.8 * A / np.abs(np.linalg.eigvals(A)).max()
    B = r.standard_normal((n, n))
    E = r.standard_normal((m, m))
    return DynamicsModel(
        D, B @ B.T / n + 0.1 * np.eye(n), r.standard_normal((m, n)), E @ E.T / m + 0.2 * np.eye(m),
        r.standard_normal(n), np.eye(n),
    )


class TestDynamicsModel:
    def test_scalar_stationary_start(self):
        m = DynamicsModel.scalar(0.6, 0.64, 0.1)
        assert m.x0_cov[0, 0] == pytest.approx(1.0)
        assert m.stable and m.spectral_radius == pytest.approx(0.6)

    def test_unstable_is_reported(self):
        m = DynamicsModel.scalar(1.2, 1.0, 0.1)
        assert not m.stable and m.x0_cov[0, 0] == 1.0

    def test_non_psd_noise(self):
        with pytest.raises(DomainError):
            DynamicsModel(np.eye(2), np.diag([1.0, -1.0]), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            DynamicsModel(np.eye(2), np.eye(2), np.ones((1, 3)), np.eye(1), np.zeros(2), np.eye(2))


class TestSimulate:
    def test_zero_transition(self):
        m = DynamicsModel(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)), [3.0, -1.0], np.zeros((2, 2)))
        X, Y = simulate_dynamics(m, 5, seed=0)
        np.testing.assert_array_equal(X[0], [3.0, -1.0])
        assert np.all(X[1:] == 0)

    def test_identity_without_noise(self):
        m = DynamicsModel(np.eye(2), np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)), [0.5, 2.0], np.zeros((2, 2)))
        X, Y = simulate_dynamics(m, 20, seed=0)
        np.testing.assert_array_equal(X, np.tile([0.5, 2.0], (20, 1)))
        np.testing.assert_array_equal(Y, X)

    def test_stationary_variance(self):
        d, s2 = 0.7, 0.5
        X, _ = simulate_dynamics(DynamicsModel.scalar(d, s2, 1.0), 100_000, seed=1)
        assert X.var() == pytest.approx(s2 / (1 - d * d), rel=0.05)

    def test_deterministic(self, rng):
        m = random_model(rng)
        a = simulate_dynamics(m, 10, seed=4)
        b = simulate_dynamics(m, 10, seed=4)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_needs_a_step(self):
        with pytest.raises(DomainError):
            simulate_dynamics(DynamicsModel.scalar(0.5, 1, 1), 0)


class TestKalmanFilter:
    def test_scalar_joint_oracle(self):
        m = DynamicsModel.scalar(0.9, 0.4, 0.25, x0_mean=1.0)
        Ys = np.array([[0.3], [1.1], [-0.4]])
        res = kalman_filter(m, Ys)
        means, covs = joint_filter(m, Ys)
        np.testing.assert_allclose(res.mean, means, atol=1e-10)
        np.testing.assert_allclose(res.cov, covs, atol=1e-10)

    def test_vector_joint_oracle(self, rng):
        m = random_model(rng)
        _, Ys = simulate_dynamics(m, 4, seed=2)
        res = kalman_filter(m, Ys)
        means, covs = joint_filter(m, Ys)
        np.testing.assert_allclose(res.mean, means, atol=1e-10)
        np.testing.assert_allclose(res.cov, covs, atol=1e-10)

    def test_loglik(self, rng):
        m = random_model(rng)
        _, Ys = simulate_dynamics(m, 4, seed=3)
        _, my, _, _, Syy = joint_moments(m, 4)
        ref = multivariate_normal(my, Syy).logpdf(Ys.ravel())
        assert kalman_filter(m, Ys).loglik == pytest.approx(ref, rel=1e-10)

    def test_missing_row(self, rng):
        m = random_model(rng)
        _, Ys = simulate_dynamics(m, 3, seed=5)
        Ys[1] = np.nan
        res = kalman_filter(m, Ys)
        # drop Y_1 from the joint conditioning
        mx, my, Sxx, Sxy, Syy = joint_moments(m, 3)
        keep = np.r_[0:2, 4:6]
        G = np.linalg.solve(Syy[np.ix_(keep, keep)], Sxy[6:9, keep].T).T
        np.testing.assert_allclose(res.mean[2], mx[6:9] + G @ (Ys[[0, 2]].ravel() - my[keep]), atol=1e-10)

    def test_exact_observation_limit(self, rng):
        m = DynamicsModel.scalar(0.8, 1.0, 1e-12, n=3)
        _, Ys = simulate_dynamics(m, 10, seed=6)
        np.testing.assert_allclose(kalman_filter(m, Ys).mean, Ys, atol=1e-4)

    def test_no_information_limit(self):
        m = DynamicsModel.scalar(0.8, 1.0, 1e12, x0_mean=2.0)
        res = kalman_filter(m, np.full((6, 1), 5.0))
        np.testing.assert_allclose(res.mean[:, 0], 2.0 * 0.8 ** np.arange(6), atol=1e-4)

    def test_update_never_increases_uncertainty(self, rng):
        m = random_model(rng)
        _, Ys = simulate_dynamics(m, 30, seed=7)
        res = kalman_filter(m, Ys)
        for P, Pp in zip(res.cov, res.pred_cov):
            np.testing.assert_array_equal(P, P.T)
            assert np.linalg.eigvalsh(Pp - P).min() >= -1e-12

    def test_uninformative_extra_row(self, rng):
        m = random_model(rng)
        _, Ys = simulate_dynamics(m, 8, seed=8)
        Seps = np.zeros((3, 3))
        Seps[:2, :2] = m.Sigma_eps
        Seps[2, 2] = 1e12
        big = DynamicsModel(m.D, m.Sigma_nu, np.vstack([m.C_obs, np.zeros(3)]), Seps, m.x0_mean, m.x0_cov)
        a = kalman_filter(m, Ys)
        b = kalman_filter(big, np.column_stack([Ys, rng.standard_normal(8)]))
        np.testing.assert_allclose(b.mean, a.mean, atol=1e-8)
        np.testing.assert_allclose(b.cov, a.cov, atol=1e-8)

    def test_covariance_converges(self):
        m = DynamicsModel.scalar(0.7, 0.5, 0.3, n=2)
        res = kalman_filter(m, np.zeros((200, 2)))
        assert np.abs(np.diff(res.cov[100:], axis=0)).max() < 1e-10

    def test_singular_innovation(self):
        m = DynamicsModel(np.eye(1), np.zeros((1, 1)), np.eye(1), np.zeros((1, 1)), [0.0], np.zeros((1, 1)))
        with pytest.raises(NumericalError):
            kalman_filter(m, np.zeros((2, 1)))

    def test_wrong_columns(self):
        with pytest.raises(DomainError):
            kalman_filter(DynamicsModel.scalar(0.5, 1, 1, n=2), np.zeros((3, 3)))

    def test_partially_missing(self):
        with pytest.raises(DomainError):
            kalman_filter(DynamicsModel.scalar(0.5, 1, 1, n=2), np.array([[0.0, np.nan]]))

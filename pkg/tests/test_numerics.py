import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchssm.core import NotStationary, companion_matrix
from switchssm.numerics import (CompanionSystem, cross_lag_cov, duplication_matrix,
                                floor_eigenvalues, lyapunov_residual, psd_sqrt, shrink_to_stable,
                                spectral_radius, stationary_cov_companion,
                                stationary_cov_sylvester, stationary_cov_vectorized)


def random_stable_system(rng, r, p, radius=0.95):
    blocks = rng.standard_normal((p, r, r))
    rho = spectral_radius(companion_matrix(blocks))
    blocks = shrink_to_stable(blocks * (1.5 / max(rho, 1e-3)), 1 - radius * rng.uniform(0.3, 1))
    G = rng.standard_normal((r, r))
    return CompanionSystem.from_blocks(blocks, G @ G.T + 0.1 * np.eye(r))


class TestSpectralRadius:
    def test_identity(self):
        assert spectral_radius(np.eye(3)) == 1.0

    def test_scalar(self):
        assert spectral_radius(np.array([[0.5]])) == 0.5

    def test_ar2_companion(self):
        # larger root of z^2 - 0.5 z - 0.4
        root = (0.5 + np.sqrt(0.25 + 1.6)) / 2
        rho = spectral_radius(companion_matrix(np.array([[[0.5]], [[0.4]]])))
        assert rho == pytest.approx(root, rel=1e-8)
        assert rho == pytest.approx(0.930, abs=5e-4)

    def test_non_square(self):
        with pytest.raises(ValueError):
            spectral_radius(np.ones((2, 3)))


class TestShrink:
    def test_scalar_example(self):
        out = shrink_to_stable(np.array([[[2.0]]]), 0.01)
        assert out[0, 0, 0] == pytest.approx(0.99)

    def test_stable_unchanged(self):
        A = np.array([[[0.8]]])
        np.testing.assert_array_equal(shrink_to_stable(A, 0.02), A)

    def test_ar2_example(self):
        out = shrink_to_stable(np.array([[[1.2]], [[0.5]]]), 0.02)
        assert spectral_radius(companion_matrix(out)) <= 0.98 + 1e-8

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            shrink_to_stable(np.zeros((1, 1, 1)), 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.floats(0.01, 0.5),
           st.integers(0, 2**31 - 1))
    def test_radius_bound_and_idempotence(self, p, r, eps, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((p, r, r)) * 2
        once = shrink_to_stable(A, eps)
        if spectral_radius(companion_matrix(A)) < 1:
            np.testing.assert_array_equal(once, A)
        else:
            assert spectral_radius(companion_matrix(once)) <= 1 - eps + 1e-8
        np.testing.assert_array_equal(shrink_to_stable(once, eps), once)


class TestStationaryCov:
    def test_ar1(self):
        sys = CompanionSystem.from_blocks(np.array([[[0.5]]]), np.array([[0.75]]))
        assert stationary_cov_companion(sys)[0, 0] == pytest.approx(1.0, rel=1e-12)

    def test_zero_dynamics(self):
        Q = np.array([[2.0, 0.3], [0.3, 1.0]])
        sys = CompanionSystem.from_blocks(np.zeros((1, 2, 2)), Q)
        np.testing.assert_allclose(stationary_cov_companion(sys), Q, atol=1e-14)

    def test_diagonal_example(self):
        sys = CompanionSystem.from_blocks(np.diag([0.5, 0.9])[None], np.eye(2))
        expected = np.diag([4 / 3, 100 / 19])
        np.testing.assert_allclose(stationary_cov_companion(sys), expected, atol=1e-12)
        np.testing.assert_allclose(stationary_cov_vectorized(sys), expected, atol=1e-12)

    def test_unstable_raises(self):
        sys = CompanionSystem.from_blocks(np.array([[[1.0]]]), np.eye(1))
        with pytest.raises(NotStationary):
            stationary_cov_companion(sys)

    def test_singular_companion_uses_vectorized_route(self):
        # lag-2 block zero makes the companion matrix singular
        blocks = np.array([[[0.5, 0.1], [0.0, 0.3]], [[0.0, 0.0], [0.0, 0.0]]])
        sys = CompanionSystem.from_blocks(blocks, np.eye(2))
        S = stationary_cov_companion(sys)
        assert lyapunov_residual(sys, S) < 1e-10

    def test_reduced_vectorized_matches_full(self, rng):
        sys = random_stable_system(rng, 2, 2)
        np.testing.assert_allclose(stationary_cov_vectorized(sys, reduced=True),
                                   stationary_cov_vectorized(sys), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_routes_agree_and_psd(self, r, p, seed):
        rng = np.random.default_rng(seed)
        sys = random_stable_system(rng, r, p)
        S = stationary_cov_companion(sys)
        V = stationary_cov_vectorized(sys)
        assert np.max(np.abs(S - V)) <= 1e-8 * (1 + np.max(np.abs(V)))
        np.testing.assert_array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() >= -1e-9 * np.abs(S).max()
        assert lyapunov_residual(sys, S) <= 1e-9 * (1 + np.max(np.abs(sys.Q_tilde))) * 10

    def test_sylvester_route_direct(self, rng):
        sys = random_stable_system(rng, 2, 1)
        np.testing.assert_allclose(stationary_cov_sylvester(sys), stationary_cov_vectorized(sys),
                                   atol=1e-9)


class TestCrossLag:
    def test_geometric(self):
        sys = CompanionSystem.from_blocks(np.array([[[0.5]]]), np.array([[0.75]]))
        lags = cross_lag_cov(sys, np.array([[1.0]]), 3)
        assert [float(L[0, 0]) for L in lags] == [1.0, 0.5, 0.25, 0.125]

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        A = np.array([[0.6, 0.2], [-0.1, 0.4]])
        Q = np.array([[1.0, 0.3], [0.3, 0.5]])
        sys = CompanionSystem.from_blocks(A[None], Q)
        S = stationary_cov_companion(sys)
        T = 100_000
        L = np.linalg.cholesky(Q)
        x = np.zeros((T, 2))
        x[0] = np.linalg.cholesky(S) @ rng.standard_normal(2)
        e = rng.standard_normal((T, 2)) @ L.T
        for t in range(1, T):
            x[t] = A @ x[t - 1] + e[t]
        lag1 = x[1:].T @ x[:-1] / (T - 1)
        np.testing.assert_allclose(lag1, cross_lag_cov(sys, S, 1)[1], atol=0.05)


class TestHelpers:
    def test_duplication(self):
        D = duplication_matrix(3)
        S = np.array([[1.0, 2, 3], [2, 4, 5], [3, 5, 6]])
        vech = np.array([S[i, j] for j in range(3) for i in range(j, 3)])
        np.testing.assert_array_equal(D @ vech, S.reshape(-1, order="F"))

    def test_psd_sqrt_singular(self):
        S = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = psd_sqrt(S)
        np.testing.assert_allclose(L @ L.T, S, atol=1e-12)

    def test_floor_eigenvalues(self):
        out = floor_eigenvalues(np.diag([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(np.linalg.eigvalsh(out), [0.1, 1.0])

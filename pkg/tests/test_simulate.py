import numpy as np
import pytest

from switchssm.core import Kind, ModelSpec, ThetaParams
from switchssm.metrics import relative_l11
from switchssm.numerics import companion_matrix, spectral_radius
from switchssm.simulate import make_study_theta, simulate_chain, simulate_model
from switchssm.stationary import stationary_measures

from conftest import random_theta


class TestChain:
    def test_identity_chain_constant(self):
        S = simulate_chain([1, 0], np.eye(2), 50, 0)
        assert np.all(S == 0)

    def test_start_in_second_regime(self):
        for seed in range(10):
            assert simulate_chain([0, 1], np.full((2, 2), 0.5), 5, seed)[0] == 1

    def test_transition_frequencies(self):
        Z = np.array([[0.98, 0.02], [0.02, 0.98]])
        S = simulate_chain([1, 0], Z, 100_000, 1)
        for i in range(2):
            nxt = S[1:][S[:-1] == i]
            n = nxt.size
            freq = np.mean(nxt == i)
            se = np.sqrt(0.98 * 0.02 / n)
            assert abs(freq - 0.98) <= 3 * se

    def test_invalid_probabilities(self):
        with pytest.raises(ValueError):
            simulate_chain([0.5, 0.6], np.eye(2), 5, 0)

    def test_deterministic(self):
        Z = np.array([[0.9, 0.1], [0.2, 0.8]])
        np.testing.assert_array_equal(simulate_chain([0.5, 0.5], Z, 100, 3),
                                      simulate_chain([0.5, 0.5], Z, 100, 3))


class TestSimulateModel:
    def test_zero_dynamics(self):
        spec = ModelSpec(kind="dyn", M=1, p=1, r=1, N=2)
        th = ThetaParams(A=np.zeros((1, 1, 1, 1)), C=np.ones((1, 2, 1)), Q=np.zeros((1, 1, 1)),
                         R=np.zeros((1, 2, 2)), mu=np.zeros((1, 1)), Sigma=np.zeros((1, 1, 1)),
                         pi=np.ones(1), Z=np.ones((1, 1)))
        assert np.all(simulate_model(th, spec, 20, 0).y == 0)

    def test_ar1_variance(self):
        spec = ModelSpec(kind="var", M=1, p=1, r=1, N=1)
        th = ThetaParams(A=np.full((1, 1, 1, 1), 0.5), C=np.ones((1, 1, 1)),
                         Q=np.full((1, 1, 1), 0.75), R=np.zeros((1, 1, 1)), mu=np.zeros((1, 1)),
                         Sigma=np.ones((1, 1, 1)), pi=np.ones(1), Z=np.ones((1, 1)))
        y = simulate_model(th, spec, 100_000, 5).y
        assert y.var() == pytest.approx(1.0, abs=0.05)

    def test_var_observes_state_exactly(self, rng):
        spec = ModelSpec(kind="var", M=2, p=2, r=3, N=3)
        out = simulate_model(random_theta(spec, rng), spec, 100, 1)
        np.testing.assert_array_equal(out.y, out.x)

    @pytest.mark.parametrize("kind", ["dyn", "var", "obs"])
    def test_same_seed_bit_identical(self, kind):
        spec = ModelSpec(kind=kind, M=2, p=2, r=2, N=4)
        th = random_theta(spec, np.random.default_rng(0))
        a, b = simulate_model(th, spec, 80, 9), simulate_model(th, spec, 80, 9)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x) and np.array_equal(a.S, b.S)

    def test_shapes(self, rng):
        spec = ModelSpec(kind="obs", M=3, p=1, r=2, N=5)
        out = simulate_model(random_theta(spec, rng), spec, 30, 0)
        assert out.y.shape == (30, 5) and out.x.shape == (30, 3, 2) and out.S.shape == (30,)

    def test_forced_regimes(self, rng):
        spec = ModelSpec(kind="dyn", M=2, p=1, r=1, N=2)
        S = np.array([0, 1] * 10)
        out = simulate_model(random_theta(spec, rng), spec, 20, 0, S=S)
        np.testing.assert_array_equal(out.S, S)

    def test_unstable_rejected(self, rng):
        spec = ModelSpec(kind="dyn", M=1, p=1, r=1, N=2)
        th = random_theta(spec, rng).replace(A=np.full((1, 1, 1, 1), 1.1))
        with pytest.raises(ValueError):
            simulate_model(th, spec, 10, 0)

    def test_obs_paths_independent(self, rng):
        spec = ModelSpec(kind="obs", M=2, p=1, r=1, N=2)
        th = random_theta(spec, rng)
        x = simulate_model(th, spec, 20_000, 4).x[:, :, 0]
        rho = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
        # AR(1) paths: effective sample size shrinks; 3 s.e. with a generous bound
        assert abs(rho) < 3 * 3 / np.sqrt(x.shape[0])

    @pytest.mark.parametrize("kind", ["dyn", "obs"])
    def test_single_regime_covariance(self, kind):
        spec = ModelSpec(kind=kind, M=2, p=2, r=2, N=4)
        th = random_theta(spec, np.random.default_rng(21))
        out = simulate_model(th, spec, 100_000, 8, S=np.ones(100_000, dtype=int))
        emp = np.cov(out.y.T)
        assert relative_l11(emp, stationary_measures(th, spec).cov[1]) < 0.05


class TestStudyTheta:
    def test_dyn_orthonormal_C(self):
        spec = ModelSpec(kind="dyn", M=2, p=2, r=2, N=10)
        th = make_study_theta(spec, np.random.default_rng(0))
        np.testing.assert_allclose(th.C[0].T @ th.C[0], np.eye(2), atol=1e-12)

    def test_var_off_diagonal_zero(self):
        spec = ModelSpec(kind="var", M=2, p=2, r=4, N=4)
        th = make_study_theta(spec, np.random.default_rng(0))
        off = ~np.eye(4, dtype=bool)
        assert np.all(th.A[:, :, off] == 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_snr_and_stability(self, seed):
        spec = ModelSpec(kind="dyn", M=2, p=2, r=2, N=10)
        th = make_study_theta(spec, np.random.default_rng(seed))
        cov = stationary_measures(th, spec).cov
        for j in range(2):
            assert spectral_radius(companion_matrix(th.A[j])) < 1
            signal = np.trace(cov[j]) - np.trace(th.R[0])
            assert 5 <= signal / np.trace(th.R[0]) <= 10

    def test_design_values(self):
        spec = ModelSpec(kind="obs", M=2, p=2, r=2, N=10)
        th = make_study_theta(spec, np.random.default_rng(1))
        assert th.pi.tolist() == [1.0, 0.0]
        np.testing.assert_allclose(th.Z, [[0.98, 0.02], [0.02, 0.98]])
        assert np.all((th.A[:, 0] >= 0) & (th.A[:, 0] <= 0.7))
        assert np.all((th.A[:, 1] >= 0) & (th.A[:, 1] <= 0.3))
        R = th.R[0]
        assert R[0, 0] == pytest.approx(0.005 / 10)
        assert R[0, 1] == pytest.approx(0.1 * 0.005 / 10)
        assert not np.allclose(th.C[0], th.C[1])

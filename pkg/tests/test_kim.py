import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from switchssm.core import Kind, ModelSpec, NumericalFailure, ThetaParams
from switchssm.kim import (decode_regimes, dwell_times, kalman_fixed_regime, kim_filter,
                           kim_smoother, loglik, regime_path_logprob, system_matrices)
from switchssm.metrics import classification_rate
from switchssm.simulate import simulate_model

from conftest import random_theta, textbook_kalman_loglik, textbook_rts


def _joint(theta, spec):
    sm = system_matrices(theta, spec)
    return sm.A[0], sm.Q[0], sm.C[0], sm.R[0], sm.mu[0], sm.Sigma[0]


@pytest.mark.parametrize("kind", ["dyn", "var", "obs"])
@pytest.mark.parametrize("seed", range(4))
def test_m1_filter_matches_textbook_kalman(kind, seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(kind=kind, M=1, p=1 + seed % 2, r=1 + seed % 2, N=3)
    th = random_theta(spec, rng)
    y = simulate_model(th, spec, 200, rng).y
    ref = textbook_kalman_loglik(y, *_joint(th, spec))
    assert abs(kim_filter(y, th, spec).loglik - ref) <= 1e-8 * abs(ref)


@pytest.mark.parametrize("kind", ["dyn", "obs"])
def test_m1_smoother_matches_rts(kind):
    rng = np.random.default_rng(5)
    spec = ModelSpec(kind=kind, M=1, p=2, r=2, N=4)
    th = random_theta(spec, rng)
    y = simulate_model(th, spec, 120, rng).y
    xs, Ps = textbook_rts(y, *_joint(th, spec))
    st_ = kim_smoother(y, th, spec)
    np.testing.assert_allclose(st_.x[:, 0], xs, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(st_.V[:, 0], Ps, rtol=1e-8, atol=1e-8)


def test_pure_noise_closed_form(rng):
    spec = ModelSpec(kind="dyn", M=1, p=1, r=2, N=2)
    R = np.array([[0.5, 0.1], [0.1, 0.3]])
    th = ThetaParams(A=np.zeros((1, 1, 2, 2)), C=np.eye(2)[None], Q=np.zeros((1, 2, 2)),
                     R=R[None], mu=np.zeros((1, 2)), Sigma=np.zeros((1, 2, 2)), pi=np.ones(1),
                     Z=np.ones((1, 1)))
    y = rng.standard_normal((50, 2))
    expected = multivariate_normal(np.zeros(2), R).logpdf(y).sum()
    assert kim_filter(y, th, spec).loglik == pytest.approx(expected, rel=1e-9)


def test_identical_regimes_follow_chain(rng):
    spec = ModelSpec(kind="dyn", M=2, p=1, r=1, N=2)
    base = random_theta(ModelSpec(kind="dyn", M=1, p=1, r=1, N=2), rng)
    dup = lambda a: np.concatenate([a, a])
    Z = np.array([[0.9, 0.1], [0.3, 0.7]])
    th = ThetaParams(A=dup(base.A), C=dup(base.C), Q=dup(base.Q), R=dup(base.R),
                     mu=dup(base.mu), Sigma=dup(base.Sigma), pi=np.array([0.2, 0.8]), Z=Z)
    y = simulate_model(th, spec, 40, rng).y
    fs = kim_filter(y, th, spec)
    marg = np.array([0.2, 0.8])
    for t in range(40):
        if t > 0:
            marg = marg @ Z
        np.testing.assert_allclose(fs.W_filt[t], marg, atol=1e-12)


class TestSmootherInvariants:
    @settings(max_examples=15, deadline=None)
    @given(st.sampled_from(["dyn", "var", "obs"]), st.integers(2, 3), st.integers(0, 10_000))
    def test_probabilities_normalized_and_consistent(self, kind, M, seed):
        rng = np.random.default_rng(seed)
        spec = ModelSpec(kind=kind, M=M, p=1 + seed % 2, r=2, N=3)
        th = random_theta(spec, rng)
        y = simulate_model(th, spec, 60, rng).y
        s = kim_smoother(y, th, spec)
        assert np.all((s.W >= 0) & (s.W <= 1))
        np.testing.assert_allclose(s.W.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(s.W_pair.sum(axis=(1, 2))[1:], 1.0, atol=1e-10)
        np.testing.assert_allclose(s.W_pair[1:].sum(axis=1), s.W[1:], atol=1e-10)
        np.testing.assert_allclose(s.W_pair[1:].sum(axis=2), s.W[:-1], atol=1e-10)
        f = s.filter
        np.testing.assert_allclose(f.W_filt.sum(axis=1), 1.0, atol=1e-12)
        for t in (0, 30, 59):
            for j in range(M):
                V = s.V[t, j]
                assert np.linalg.eigvalsh(0.5 * (V + V.T)).min() > -1e-9

    def test_loglik_finite_and_matches_filter(self, rng):
        spec = ModelSpec(kind="dyn", M=2, p=2, r=2, N=4)
        th = random_theta(spec, rng)
        y = simulate_model(th, spec, 80, rng).y
        assert kim_smoother(y, th, spec).loglik == pytest.approx(kim_filter(y, th, spec).loglik)


class TestDecoding:
    def _stats(self, W):
        class S:
            pass
        s = S()
        s.W = np.asarray(W, float)
        return s

    def test_all_first(self):
        assert decode_regimes(self._stats([[1, 0]] * 4)).tolist() == [0] * 4

    def test_tie_goes_to_smallest(self):
        assert decode_regimes(self._stats([[0.5, 0.5]])).tolist() == [0]

    def test_dwell_times(self):
        assert dwell_times(self._stats([[1.0]] * 3)).tolist() == [1.0]
        assert dwell_times(self._stats([[1, 0], [0, 1]] * 5)).tolist() == [0.5, 0.5]

    def test_study_classification(self, study_dyn):
        spec, th, sim = study_dyn
        s = kim_smoother(sim.y, th, spec)
        assert classification_rate(decode_regimes(s), sim.S, 2) >= 0.9
        counts = np.bincount(decode_regimes(s), minlength=2) / len(sim.S)
        np.testing.assert_allclose(dwell_times(s), counts, atol=0.05)


def test_likelihood_sanity():
    wins = 0
    spec = ModelSpec(kind="dyn", M=2, p=1, r=2, N=4)
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        th = random_theta(spec, rng, radius=0.95)
        y = simulate_model(th, spec, 200, rng).y
        bad = th.replace(A=th.A * 0.5)
        wins += loglik(y, th, spec) > loglik(y, bad, spec)
    assert wins / 20 > 0.5


class TestFixedRegime:
    def test_path_logprob(self):
        pi, Z = np.array([0.25, 0.75]), np.array([[0.9, 0.1], [0.4, 0.6]])
        expected = np.log(0.75) + np.log(0.4) + np.log(0.9)
        assert regime_path_logprob([1, 0, 0], pi, Z) == pytest.approx(expected)

    def test_m1_equals_kalman(self, rng):
        spec = ModelSpec(kind="dyn", M=1, p=1, r=2, N=3)
        th = random_theta(spec, rng)
        y = simulate_model(th, spec, 100, rng).y
        fixed = kalman_fixed_regime(y, th, spec, np.zeros(100, int))
        assert fixed.loglik == pytest.approx(textbook_kalman_loglik(y, *_joint(th, spec)), rel=1e-9)
        np.testing.assert_array_equal(fixed.W[:, 0], 1.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_hard_path_below_switching(self, seed):
        rng = np.random.default_rng(seed)
        spec = ModelSpec(kind="dyn", M=2, p=1, r=1, N=2)
        th = random_theta(spec, rng)
        sim = simulate_model(th, spec, 80, rng)
        hard = kalman_fixed_regime(sim.y, th, spec, sim.S).loglik
        assert hard <= loglik(sim.y, th, spec) + 1e-8 * abs(hard)


def test_bad_shape_rejected(rng):
    spec = ModelSpec(kind="dyn", M=2, p=1, r=1, N=3)
    with pytest.raises(ValueError):
        kim_filter(np.zeros((10, 2)), random_theta(spec, rng), spec)


def test_invalid_theta_rejected(rng):
    spec = ModelSpec(kind="dyn", M=2, p=1, r=1, N=3)
    th = random_theta(spec, rng).replace(pi=np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        kim_filter(np.zeros((10, 3)), th, spec)


def test_numerical_failure_carries_time(rng):
    spec = ModelSpec(kind="dyn", M=1, p=1, r=1, N=1)
    th = ThetaParams(A=np.zeros((1, 1, 1, 1)), C=np.ones((1, 1, 1)), Q=np.zeros((1, 1, 1)),
                     R=np.zeros((1, 1, 1)), mu=np.zeros((1, 1)), Sigma=np.zeros((1, 1, 1)),
                     pi=np.ones(1), Z=np.ones((1, 1)))
    y = np.zeros((5, 1))
    y[2] = np.nan
    with pytest.raises((NumericalFailure, ValueError)):
        kim_filter(y, th, spec)


# Frozen regression value: log-likelihood of a fixed seeded dataset under its
# generating parameters, computed once with this implementation.
def test_frozen_loglik(study_dyn):
    spec, th, sim = study_dyn
    assert loglik(sim.y, th, spec) == pytest.approx(FROZEN_STUDY_LOGLIK, rel=1e-10)


FROZEN_STUDY_LOGLIK = 8587.147015393883

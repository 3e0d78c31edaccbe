"""Exit criteria. Each test prints one PASS/FAIL line, collected again in the run summary.

Run just these with ``pytest -m acceptance -s``. Criteria 5 to 8 use the
desk-scale switching-dynamics setting (N=10, T=400, M=2, p=2, r=2) with
fresh study-generator parameters per simulation.
"""

import os
import time

import numpy as np
import pytest

from switchssm.core import Kind, ModelSpec, SingularMoment
from switchssm.em import FitOptions, accelerated_fit, em_fit, fixed_regime_em
from switchssm.initialize import initialize
from switchssm.kim import kim_smoother, loglik
from switchssm.metrics import relative_l11
from switchssm.mstep import compute_moments, q_function, update_unconstrained
from switchssm.numerics import (CompanionSystem, companion_matrix, shrink_to_stable,
                                spectral_radius, stationary_cov_companion,
                                stationary_cov_vectorized)
from switchssm.simulate import simulate_model
from switchssm.stationary import stationary_measures
from switchssm.study import coverage_study, run_study, summarize

from conftest import random_theta, textbook_kalman_loglik

pytestmark = pytest.mark.acceptance

KINDS = ("dyn", "var", "obs")
STUDY = ModelSpec(kind=Kind.DYN, M=2, p=2, r=2, N=10)
JOBS = os.cpu_count() or 1


def _kalman_inputs(theta, spec):
    d = spec.p * spec.r
    C = np.zeros((spec.N, d))
    C[:, :spec.r] = np.eye(spec.N) if spec.kind is Kind.VAR else theta.C[0]
    R = np.zeros((spec.N, spec.N)) if spec.kind is Kind.VAR else theta.R[0]
    return theta.A_companion[0], theta.Q_companion[0], C, R, theta.mu[0], theta.Sigma[0]


def test_1_kalman_reduction(report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        kind = KINDS[i % 3]
        r = int(rng.integers(1, 3))
        N = r if kind == "var" else int(rng.integers(r, 5))
        spec = ModelSpec(kind=kind, M=1, p=int(rng.integers(1, 3)), r=r, N=N)
        th = random_theta(spec, rng)
        y = simulate_model(th, spec, 200, rng).y
        ours = loglik(y, th, spec)
        ref = textbook_kalman_loglik(y, *_kalman_inputs(th, spec))
        worst = max(worst, abs(ours - ref) / abs(ref))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-8 and elapsed < 5,
           f"max relative loglik gap {worst:.2e} over 20 systems, {elapsed:.2f} s")


def test_2_lyapunov_oracle(report):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        r = int(rng.integers(1, 4))
        spec = ModelSpec(kind="var", M=1, p=int(rng.integers(1, 4)), r=r, N=r)
        th = random_theta(spec, rng, radius=rng.uniform(0.1, 0.9))
        sys = CompanionSystem(th.A_companion[0], th.Q_companion[0])
        S = stationary_cov_companion(sys)
        vec = stationary_cov_vectorized(sys)
        X = np.zeros_like(S)
        A, Q = sys.A_tilde, sys.Q_tilde
        for _ in range(10_000):
            X = A @ X @ A.T + Q
        worst = max(worst, np.abs(S - vec).max(), np.abs(S - X).max())
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-6 and elapsed < 10,
           f"max-norm gap {worst:.2e} over 100 systems, {elapsed:.2f} s")


def test_3_mstep_optimality(report):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    worst, outside = -np.inf, 0
    for i in range(20):
        kind = KINDS[i % 3]
        spec = ModelSpec(kind=kind, M=2, p=int(rng.integers(1, 3)), r=2,
                         N=2 if kind == "var" else 3)
        th = random_theta(spec, rng)
        y = simulate_model(th, spec, 80, rng).y
        mom = compute_moments(y, kim_smoother(y, th, spec), spec)
        best = update_unconstrained(mom, spec, th)
        q0 = q_function(best, mom, spec)
        names = ("A", "Q", "mu", "Sigma") + (() if kind == "var" else ("C", "R"))
        shared = {"R"} | ({"C"} if kind == "dyn" else set())
        for name in names:
            base = getattr(best, name)
            for _ in range(50):
                d = 1e-3 * rng.standard_normal(base.shape[1:] if name in shared else base.shape)
                if name in ("Q", "R", "Sigma"):
                    d = d + np.swapaxes(d, -1, -2)
                try:
                    gain = q_function(best.replace(**{name: base + d}), mom, spec) - q0
                except SingularMoment:
                    # left the positive-definite cone: Q is -inf there
                    outside += 1
                    continue
                worst = max(worst, gain)
        for _ in range(50):
            e = 1e-3 * rng.standard_normal(2)
            pi = best.pi + np.array([e[0], -e[0]])
            Z = best.Z + np.array([[e[1], -e[1]], [-e[0], e[0]]])
            if np.all(pi > 0) and np.all(Z > 0):
                worst = max(worst, q_function(best.replace(pi=pi, Z=Z), mom, spec) - q0)
    elapsed = time.perf_counter() - start
    report(3, worst <= 1e-9 and elapsed < 30,
           f"largest perturbed Q gain {worst:.2e} over 20 moment sets "
           f"({outside} non-definite perturbations), {elapsed:.2f} s")


def test_4_eigen_shrinkage(report):
    rng = np.random.default_rng(404)
    worst_radius = worst_idem = -np.inf
    for _ in range(100):
        p, r = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        eps = rng.uniform(0.001, 0.2)
        A = rng.standard_normal((p, r, r))
        while spectral_radius(companion_matrix(A)) <= 1:
            A = 1.5 * A
        out = shrink_to_stable(A, eps)
        worst_radius = max(worst_radius, spectral_radius(companion_matrix(out)) - (1 - eps))
        worst_idem = max(worst_idem, np.abs(shrink_to_stable(out, eps) - out).max())
    report(4, worst_radius <= 1e-8 and worst_idem == 0.0,
           f"max radius excess {worst_radius:.2e}, idempotence gap {worst_idem:.1e} over 100 sets")


@pytest.fixture(scope="module")
def study_summary():
    start = time.perf_counter()
    recs = run_study(STUDY, 400, 50, seed=5, jobs=JOBS)
    return summarize(recs), recs, time.perf_counter() - start


@pytest.mark.slow
def test_5_classification_study(report, study_summary):
    s, recs, elapsed = study_summary
    ml, km, ols = (s[m]["rate"] for m in ("SSM-ML", "SW-KM", "SSM-OLS"))
    ok = s["SSM-ML"]["n"] == 50 and ml >= 0.90 and ml > km and ml > ols
    report(5, ok, f"mean rates SSM-ML {ml:.3f}, SSM-OLS {ols:.3f}, SW-KM {km:.3f} "
                  f"(n={s['SSM-ML']['n']}), {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_6_bootstrap_coverage(report):
    start = time.perf_counter()
    cov, recs = coverage_study(STUDY, 400, 50, 50, seed=6, level=0.9, method="percentile",
                               targets=("Z",), jobs=JOBS)
    elapsed = time.perf_counter() - start
    report(6, len(recs) >= 45 and 0.80 <= cov["Z"] <= 1.00,
           f"Z percentile coverage {cov['Z']:.3f} over {len(recs)} sims x B=50, "
           f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_7_transition_accuracy(report, study_summary):
    s, recs, _ = study_summary
    med, mean = s["SSM-ML"]["median_errors"]["Z"], s["SSM-ML"]["errors"]["Z"]
    report(7, med <= 0.05, f"SSM-ML Z relative error median {med:.4f}, mean {mean:.4f}")


@pytest.mark.slow
def test_8_acceleration(report, study_dyn):
    spec, _, sim = study_dyn
    th0 = initialize(sim.y, spec, seed=0)
    fast = accelerated_fit(sim.y, spec, th0, FitOptions(accelerate=True))
    plain = em_fit(sim.y, spec, th0, FitOptions(max_iter=2000, tol_rel=1e-12))
    la, lp = fast.loglik_trace.max(), plain.loglik_trace.max()
    gap = abs(la - lp) / abs(lp)
    ratio = plain.n_passes / fast.n_passes
    report(8, gap <= 0.01 and ratio >= 3,
           f"relative gap {gap:.2e}, passes {fast.n_passes} vs {plain.n_passes} ({ratio:.1f}x)")


def test_9_fixed_regime_monotone(report):
    rng = np.random.default_rng(909)
    worst = -np.inf
    for i in range(20):
        kind = KINDS[i % 3]
        spec = ModelSpec(kind=kind, M=2, p=int(rng.integers(1, 3)), r=2,
                         N=2 if kind == "var" else 4)
        th = random_theta(spec, rng)
        sim = simulate_model(th, spec, 200, rng)
        start = random_theta(spec, rng)
        _, trace = fixed_regime_em(sim.y, spec, sim.S, start, FitOptions(max_iter=50),
                                   return_trace=True)
        worst = max(worst, -np.diff(trace).min())
    report(9, worst <= 1e-9, f"largest decrease {worst:.2e} over 20 traces")


@pytest.mark.slow
def test_10_simulation_fidelity(report):
    rng = np.random.default_rng(1010)
    T = 100_000
    worst = 0.0
    for i in range(10):
        kind = KINDS[i % 3]
        spec = ModelSpec(kind=kind, M=2, p=int(rng.integers(1, 3)), r=2,
                         N=2 if kind == "var" else 4)
        th = random_theta(spec, rng)
        j = i % 2
        y = simulate_model(th, spec, T, rng, S=np.full(T, j)).y
        worst = max(worst, relative_l11(np.cov(y.T), stationary_measures(th, spec).cov[j]))
    report(10, worst <= 0.05, f"max relative L1,1 covariance error {worst:.4f} over 10 models")

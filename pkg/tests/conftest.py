import numpy as np
import pytest

from switchssm.core import Kind, ModelSpec, ThetaParams
from switchssm.numerics import shrink_to_stable


def random_spd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + 0.2 * np.eye(n))


def random_theta(spec: ModelSpec, rng, radius=0.8, obs_noise=0.3) -> ThetaParams:
    """Small random valid parameter set (stable lags, SPD covariances)."""
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    A = np.empty((M, p, r, r))
    for j in range(M):
        blocks = rng.uniform(-0.6, 0.6, (p, r, r)) / p
        A[j] = shrink_to_stable(blocks, 1 - radius)
    Q = np.stack([random_spd(rng, r, 0.5) for _ in range(M)])
    if spec.kind is Kind.VAR:
        C = np.stack([np.eye(N)] * M)
        R = np.zeros((M, N, N))
    else:
        C0 = rng.standard_normal((N, r))
        C = np.stack([C0 if spec.kind is Kind.DYN else rng.standard_normal((N, r))
                      for _ in range(M)])
        R = np.stack([random_spd(rng, N, obs_noise)] * M)
    d = p * r
    mu = rng.standard_normal((M, d)) * 0.3
    Sigma = np.stack([random_spd(rng, d, 0.5) for _ in range(M)])
    pi = rng.dirichlet(np.ones(M))
    Z = 0.7 * np.eye(M) + 0.3 * rng.dirichlet(np.ones(M), size=M) if M > 1 else np.ones((1, 1))
    return ThetaParams(A=A, C=C, Q=Q, R=R, mu=mu, Sigma=Sigma, pi=pi, Z=Z)


def textbook_kalman_loglik(y, A, Q, C, R, mu, Sigma):
    """Plain covariance-form Kalman filter log-likelihood (independent oracle)."""
    T, N = y.shape
    x, P = mu.copy(), Sigma.copy()
    ll = 0.0
    for t in range(T):
        if t > 0:
            x = A @ x
            P = A @ P @ A.T + Q
        F = C @ P @ C.T + R
        e = y[t] - C @ x
        sign, logdet = np.linalg.slogdet(F)
        ll += -0.5 * (N * np.log(2 * np.pi) + logdet + e @ np.linalg.solve(F, e))
        K = P @ C.T @ np.linalg.inv(F)
        x = x + K @ e
        P = P - K @ C @ P
    return ll


def textbook_rts(y, A, Q, C, R, mu, Sigma):
    """Kalman filter plus Rauch-Tung-Striebel smoother; returns (xs, Ps)."""
    T, N = y.shape
    d = A.shape[0]
    xf, Pf, xp, Pp = (np.zeros((T, d)), np.zeros((T, d, d)), np.zeros((T, d)), np.zeros((T, d, d)))
    x, P = mu.copy(), Sigma.copy()
    for t in range(T):
        if t > 0:
            x = A @ x
            P = A @ P @ A.T + Q
        xp[t], Pp[t] = x, P
        F = C @ P @ C.T + R
        K = P @ C.T @ np.linalg.inv(F)
        x = x + K @ (y[t] - C @ x)
        P = P - K @ C @ P
        xf[t], Pf[t] = x, P
    xs, Ps = xf.copy(), Pf.copy()
    for t in range(T - 2, -1, -1):
        J = Pf[t] @ A.T @ np.linalg.inv(Pp[t + 1])
        xs[t] = xf[t] + J @ (xs[t + 1] - xp[t + 1])
        Ps[t] = Pf[t] + J @ (Ps[t + 1] - Pp[t + 1]) @ J.T
    return xs, Ps


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def study_dyn():
    """Desk-scale switching-dynamics dataset from the study generator."""
    from switchssm.simulate import make_study_theta, simulate_model

    spec = ModelSpec(kind=Kind.DYN, M=2, p=2, r=2, N=10)
    rng = np.random.default_rng(2024)
    theta = make_study_theta(spec, rng)
    sim = simulate_model(theta, spec, 400, rng)
    return spec, theta, sim


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def _report(number, ok, detail):
        _ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_ACCEPTANCE_LINES[-1])
        assert ok, detail

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

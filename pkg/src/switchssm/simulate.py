"""Simulation of regime chains, state paths and observations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .core import Kind, ModelSpec, NotStationary, ThetaParams, companion_matrix, validate_labels
from .numerics import CompanionSystem, psd_sqrt, spectral_radius, stationary_cov_companion

MAX_ATTEMPTS = 1000


@dataclass(frozen=True, eq=False)
class SimOutput:
    """Simulated data. ``y`` has shape (T, N); ``x`` is (T, r), or (T, M, r)
    for the switching-observations model where all M state paths are kept."""

    y: np.ndarray
    x: np.ndarray
    S: np.ndarray
    seed: Optional[int] = None


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def simulate_chain(pi, Z, T: int, rng) -> np.ndarray:
    """Draw a Markov chain of length T (0-based labels)."""
    pi = np.asarray(pi, dtype=float)
    Z = np.asarray(Z, dtype=float)
    M = pi.size
    if (np.any(pi < 0) or abs(pi.sum() - 1) > 1e-8 or Z.shape != (M, M) or np.any(Z < 0)
            or np.any(np.abs(Z.sum(axis=1) - 1) > 1e-8)):
        raise ValueError("pi and Z must be valid probability vectors/matrices")
    if T < 1:
        raise ValueError("T must be positive")
    rng = as_rng(rng)
    u = rng.random(T)
    cum_pi = np.cumsum(pi)
    cum_Z = np.cumsum(Z, axis=1)
    S = np.empty(T, dtype=np.int64)
    S[0] = min(np.searchsorted(cum_pi, u[0], side="right"), M - 1)
    for t in range(1, T):
        S[t] = min(np.searchsorted(cum_Z[S[t - 1]], u[t], side="right"), M - 1)
    return S


def _check_stability(theta: ThetaParams, spec: ModelSpec) -> None:
    if not spec.constraints.stable_A:
        return
    for j, Ac in enumerate(theta.A_companion):
        rho = spectral_radius(Ac)
        if rho >= 1.0:
            raise NotStationary(f"regime {j + 1}: spectral radius {rho:.4g} >= 1", regime=j)


def simulate_model(theta: ThetaParams, spec: ModelSpec, T: int, rng,
                   S: Optional[np.ndarray] = None) -> SimOutput:
    """Simulate (y, x, S) from the model. ``S`` may be given to force regimes."""
    if T < 1:
        raise ValueError("T must be positive")
    _check_stability(theta, spec)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = as_rng(rng)
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    d = p * r
    if S is None:
        S = simulate_chain(theta.pi, theta.Z, T, rng)
    else:
        S = validate_labels(S, M)
        if S.size != T:
            raise ValueError("forced regime sequence has wrong length")

    Ac = theta.A_companion
    Lq = np.stack([psd_sqrt(q) for q in theta.Q])
    Ls = np.stack([psd_sqrt(s) for s in theta.Sigma])
    Lr = psd_sqrt(theta.R[0]) if spec.kind is not Kind.VAR else None

    if spec.kind is Kind.OBS:
        xs = np.empty((T, M, d))
        for k in range(M):
            xs[0, k] = theta.mu[k] + Ls[k] @ rng.standard_normal(d)
        for t in range(1, T):
            e = rng.standard_normal((M, r))
            for k in range(M):
                xs[t, k] = Ac[k] @ xs[t - 1, k]
                xs[t, k, :r] += Lq[k] @ e[k]
        x = xs[:, :, :r].copy()
        w = rng.standard_normal((T, N)) @ Lr.T
        y = np.einsum("tnr,tr->tn", theta.C[S], x[np.arange(T), S]) + w
        return SimOutput(y=y, x=x, S=S, seed=seed)

    xt = np.empty((T, d))
    xt[0] = theta.mu[S[0]] + Ls[S[0]] @ rng.standard_normal(d)
    e = rng.standard_normal((T, r))
    for t in range(1, T):
        j = S[t]
        xt[t] = Ac[j] @ xt[t - 1]
        xt[t, :r] += Lq[j] @ e[t]
    x = xt[:, :r].copy()
    if spec.kind is Kind.VAR:
        return SimOutput(y=x.copy(), x=x, S=S, seed=seed)
    w = rng.standard_normal((T, N)) @ Lr.T
    y = x @ theta.C[0].T + w
    return SimOutput(y=y, x=x, S=S, seed=seed)


def study_transition_matrix(M: int, stay: float = 0.98) -> np.ndarray:
    if M == 1:
        return np.ones((1, 1))
    Z = np.full((M, M), (1.0 - stay) / (M - 1))
    np.fill_diagonal(Z, stay)
    return Z


def _wishart(df: int, scale: np.ndarray, rng) -> np.ndarray:
    return np.atleast_2d(stats.wishart.rvs(df=df, scale=scale, random_state=rng))


def _draw_state_regime(p: int, r: int, rng, R_trace: float, snr: tuple[float, float],
                       wishart_scale: float):
    """Draw (A blocks, Q) for one regime until stable with SNR in range."""
    for _ in range(MAX_ATTEMPTS):
        A = np.zeros((p, r, r))
        A[0] = rng.uniform(0.0, 0.7, size=(r, r))
        if p > 1:
            A[1] = rng.uniform(0.0, 0.3, size=(r, r))
        Q = _wishart(r, wishart_scale * np.eye(r), rng)
        Ac = companion_matrix(A)
        if spectral_radius(Ac) >= 1.0:
            continue
        Sx = stationary_cov_companion(CompanionSystem.from_blocks(A, Q))
        # C has orthonormal columns, so tr V(Cx) = tr V(x)
        ratio = np.trace(Sx[:r, :r]) / R_trace
        if snr[0] <= ratio <= snr[1]:
            return A, Q
    raise RuntimeError("could not draw a stable regime with the requested SNR")


def _orthonormal_C(N: int, r: int, rng) -> np.ndarray:
    U, _, _ = np.linalg.svd(rng.standard_normal((N, r)), full_matrices=False)
    return U[:, :r]


def make_study_theta(spec: ModelSpec, rng, snr: tuple[float, float] = (5.0, 10.0)) -> ThetaParams:
    """Random parameters following the simulation design of the study harness."""
    rng = as_rng(rng)
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    d = p * r
    pi = np.zeros(M)
    pi[0] = 1.0
    Z = study_transition_matrix(M)
    mu = np.zeros((M, d))
    Sigma = np.stack([0.1 * np.eye(d)] * M)

    if spec.kind is Kind.VAR:
        A = np.zeros((M, p, N, N))
        Q = np.empty((M, N, N))
        for j in range(M):
            for _ in range(MAX_ATTEMPTS):
                blocks = np.zeros((p, N, N))
                blocks[0] = np.diag(rng.uniform(0.85, 0.95, size=N))
                if p > 1:
                    blocks[1] = np.diag(rng.uniform(-0.05, 0.05, size=N))
                if spectral_radius(companion_matrix(blocks)) < 1.0:
                    break
            else:
                raise RuntimeError("could not draw a stable VAR regime")
            A[j] = blocks
            Q[j] = _wishart(N, (0.01 / N) * np.eye(N), rng)
        C = np.stack([np.eye(N)] * M)
        R = np.zeros((M, N, N))
        return ThetaParams(A=A, C=C, Q=Q, R=R, mu=mu, Sigma=Sigma, pi=pi, Z=Z)

    sigma2 = 0.005 / N
    R1 = sigma2 * (0.1 * np.ones((N, N)) + 0.9 * np.eye(N))
    R = np.stack([R1] * M)
    A = np.empty((M, p, r, r))
    Q = np.empty((M, r, r))
    for j in range(M):
        A[j], Q[j] = _draw_state_regime(p, r, rng, np.trace(R1), snr, 0.005)
    if spec.kind is Kind.DYN:
        C = np.stack([_orthonormal_C(N, r, rng)] * M)
    else:
        C = np.stack([_orthonormal_C(N, r, rng) for _ in range(M)])
    return ThetaParams(A=A, C=C, Q=Q, R=R, mu=mu, Sigma=Sigma, pi=pi, Z=Z)


__all__ = ["SimOutput", "simulate_chain", "simulate_model", "make_study_theta",
           "study_transition_matrix"]

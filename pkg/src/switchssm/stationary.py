"""Regime-wise stationary covariances, correlations, autocorrelations and FC features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Kind, ModelSpec, NotStationary, ThetaParams, sym
from .numerics import CompanionSystem, stationary_cov_companion


@dataclass(frozen=True, eq=False)
class StationaryMeasures:
    """Per-regime arrays: cov/corr/pcorr (M, N, N) and acf (M, N, max_lag + 1)."""

    cov: np.ndarray
    corr: np.ndarray
    acf: np.ndarray
    pcorr: np.ndarray

    @property
    def M(self) -> int:
        return self.cov.shape[0]

    @property
    def max_lag(self) -> int:
        return self.acf.shape[2] - 1


def _corr(S: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(S))
    out = S / np.outer(sd, sd)
    np.fill_diagonal(out, 1.0)
    return np.clip(out, -1.0, 1.0)


def partial_correlation(S: np.ndarray) -> np.ndarray:
    """-P_ik / sqrt(P_ii P_kk) with P = S^-1, unit diagonal.

    A singular S (no measurement noise, r < N) falls back to the
    pseudo-inverse; entries with a zero precision diagonal are set to 0.
    """
    try:
        np.linalg.cholesky(S)
        P = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        P = np.linalg.pinv(S, hermitian=True)
    d = np.sqrt(np.clip(np.diag(P), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.outer(d, d) > 0, -P / np.outer(d, d), 0.0)
    np.fill_diagonal(out, 1.0)
    return np.clip(sym(out), -1.0, 1.0)


def state_covariance(theta: ThetaParams, j: int) -> np.ndarray:
    """Stationary covariance of the companion state of process j."""
    sys = CompanionSystem(theta.A_companion[j], theta.Q_companion[j])
    try:
        return stationary_cov_companion(sys)
    except NotStationary as exc:
        raise NotStationary(f"regime {j + 1}: {exc}", regime=j) from exc


def stationary_measures(theta: ThetaParams, spec: ModelSpec, max_lag: int = 5) -> StationaryMeasures:
    """Long-run moments of the observations under a permanent regime.

    Measurement noise enters the lag-0 covariance only, since it is
    independent over time.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    M, N, r = spec.M, spec.N, spec.r
    cov = np.empty((M, N, N))
    corr = np.empty((M, N, N))
    pcorr = np.empty((M, N, N))
    acf = np.empty((M, N, max_lag + 1))
    for j in range(M):
        Sx = state_covariance(theta, j)
        Ac = theta.A_companion[j]
        C = np.zeros((N, Sx.shape[0]))
        C[:, :r] = np.eye(N) if spec.kind is Kind.VAR else theta.C[j]
        R = 0.0 if spec.kind is Kind.VAR else theta.R[j]
        cov[j] = sym(C @ Sx @ C.T + R)
        corr[j] = _corr(cov[j])
        pcorr[j] = partial_correlation(cov[j])
        var = np.diag(cov[j])
        lagged = Sx
        acf[j, :, 0] = 1.0
        for l in range(1, max_lag + 1):
            lagged = Ac @ lagged
            acf[j, :, l] = np.diag(C @ lagged @ C.T) / var
    return StationaryMeasures(cov=cov, corr=corr, acf=np.clip(acf, -1.0, 1.0), pcorr=pcorr)


def fc_feature(measures: StationaryMeasures | np.ndarray, j: int = 0) -> np.ndarray:
    """Unit-norm vectorized lower triangle (with diagonal) of a covariance."""
    S = measures.cov[j] if isinstance(measures, StationaryMeasures) else np.asarray(measures)
    v = S[np.tril_indices(S.shape[0])]
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero covariance has no FC feature")
    return v / n


def _check_weights(w, n):
    w = np.asarray(w, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-8:
        raise ValueError("weights must be a probability vector matching the features")
    return w


def weighted_fc_distance(feats_a, w_a, feats_b, w_b) -> float:
    """Half the weighted mean squared distance to the nearest feature of the other set,
    symmetrized over both directions."""
    A = np.atleast_2d(np.asarray(feats_a, dtype=float))
    B = np.atleast_2d(np.asarray(feats_b, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("feature sets must be nonempty")
    w_a = _check_weights(w_a, A.shape[0])
    w_b = _check_weights(w_b, B.shape[0])
    D = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return float(0.5 * w_a @ D.min(axis=1) + 0.5 * w_b @ D.min(axis=0))


def weighted_fc_variance(feats, w) -> float:
    F = np.atleast_2d(np.asarray(feats, dtype=float))
    w = _check_weights(w, F.shape[0])
    s2 = float(w @ w)
    if s2 >= 1.0 - 1e-12:
        raise ValueError("weighted variance is undefined when one weight equals 1")
    D = ((F[:, None, :] - F[None, :, :]) ** 2).sum(axis=2)
    return float(w @ D @ w / (1.0 - s2))


__all__ = ["StationaryMeasures", "stationary_measures", "fc_feature", "weighted_fc_distance",
           "weighted_fc_variance", "partial_correlation", "state_covariance"]

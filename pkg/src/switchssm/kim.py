"""Kim filtering and smoothing for switching state-space models.

Every model kind is mapped to a joint order-1 system with regime-indexed
matrices (see :func:`system_matrices`):

* dyn/var: the companion state of dimension p*r; var uses C = [I 0], R = 0.
* obs: the M parallel state processes stacked into one block-diagonal
  companion state of dimension M*p*r. Transition and noise are shared by all
  regimes; regime j observes block j through C_j.

Arrays are time-major: ``y`` has shape (T, N).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from . import _kernels
from .core import Kind, ModelSpec, NumericalFailure, ThetaParams, validate, validate_labels

# Ridge added to innovation covariances: reg * (1 + trace/N) on the diagonal.
INNOVATION_RIDGE = 1e-10


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    A: np.ndarray      # (M, D, D)
    Q: np.ndarray      # (M, D, D)
    C: np.ndarray      # (M, N, D)
    R: np.ndarray      # (M, N, N)
    mu: np.ndarray     # (M, D)
    Sigma: np.ndarray  # (M, D, D)
    pi: np.ndarray
    Z: np.ndarray

    @property
    def D(self) -> int:
        return self.A.shape[1]

    def measurement_terms(self, y: np.ndarray):
        """Per-regime quantities for the Woodbury measurement update.

        Returns ``(use_woodbury, G, CRy, yRy, logdetR)``. The Woodbury path is
        used only when it is cheaper (N > D) and every R_j is positive definite.
        """
        M, N, D = self.C.shape
        T = y.shape[0]
        dummy = (False, np.zeros((M, D, D)), np.zeros((1, M, D)), np.zeros((1, M)), np.zeros(M))
        if N <= D:
            return dummy
        G = np.empty((M, D, D))
        CRy = np.empty((T, M, D))
        yRy = np.empty((T, M))
        logdetR = np.empty(M)
        for j in range(M):
            Rj = self.R[j] + INNOVATION_RIDGE * (1.0 + np.trace(self.R[j]) / N) * np.eye(N)
            try:
                L = np.linalg.cholesky(Rj)
            except np.linalg.LinAlgError:
                return dummy
            Linv_C = linalg.solve_triangular(L, self.C[j], lower=True)
            Linv_y = linalg.solve_triangular(L, y.T, lower=True)
            G[j] = Linv_C.T @ Linv_C
            CRy[:, j] = (Linv_C.T @ Linv_y).T
            yRy[:, j] = np.einsum("nt,nt->t", Linv_y, Linv_y)
            logdetR[j] = 2.0 * np.log(np.diag(L)).sum()
        return True, G, CRy, yRy, logdetR


def system_matrices(theta: ThetaParams, spec: ModelSpec) -> SystemMatrices:
    M, N, r, d = spec.M, spec.N, spec.r, spec.d
    Ac, Qc = theta.A_companion, theta.Q_companion
    if spec.kind is Kind.OBS:
        D = M * d
        A1 = linalg.block_diag(*Ac)
        Q1 = linalg.block_diag(*Qc)
        S1 = linalg.block_diag(*theta.Sigma)
        mu1 = theta.mu.reshape(-1)
        C = np.zeros((M, N, D))
        for j in range(M):
            C[j, :, j * d:j * d + r] = theta.C[j]
        tile = lambda X: np.ascontiguousarray(np.broadcast_to(X, (M,) + X.shape))
        return SystemMatrices(tile(A1), tile(Q1), C, np.ascontiguousarray(theta.R),
                              tile(mu1), tile(S1), np.array(theta.pi), np.array(theta.Z))
    C = np.zeros((M, N, d))
    C[:, :, :r] = theta.C
    R = np.zeros((M, N, N)) if spec.kind is Kind.VAR else np.array(theta.R)
    return SystemMatrices(np.ascontiguousarray(Ac), np.ascontiguousarray(Qc), C, R,
                          np.array(theta.mu), np.array(theta.Sigma),
                          np.array(theta.pi), np.array(theta.Z))


@dataclass(frozen=True, eq=False)
class FilterStats:
    """Forward-pass output. W_pred/W_filt are (T, M); state moments (T, M, D[, D])."""

    W_pred: np.ndarray
    W_filt: np.ndarray
    x_pred: np.ndarray
    V_pred: np.ndarray
    x_filt: np.ndarray
    V_filt: np.ndarray
    loglik_t: np.ndarray

    @property
    def loglik(self) -> float:
        return float(self.loglik_t.sum())

    @property
    def T(self) -> int:
        return self.W_filt.shape[0]


@dataclass(frozen=True, eq=False)
class SmoothedStats:
    """Backward-pass output.

    ``W`` (T, M) are the smoothed regime probabilities and ``W_pair[t, i, j]``
    the joint probability of (S_{t-1} = i, S_t = j), with ``W_pair[0]`` unused
    (zero). ``x``/``V`` are smoothed means/covariances given S_t = j;
    ``P_lag[t, j]`` is E[x_{t-1} x_{t-1}' | S_t = j] and ``P_cross[t, j]`` is
    E[x_t x_{t-1}' | S_t = j], both zero at t = 0.
    """

    W: np.ndarray
    x: np.ndarray
    V: np.ndarray
    W_pair: np.ndarray
    P_lag: np.ndarray
    P_cross: np.ndarray
    loglik: float
    filter: FilterStats | None = None

    @cached_property
    def P(self) -> np.ndarray:
        """Second moments E[x_t x_t' | S_t = j]."""
        return self.V + np.einsum("tmi,tmj->tmij", self.x, self.x)

    @property
    def T(self) -> int:
        return self.W.shape[0]

    @property
    def M(self) -> int:
        return self.W.shape[1]


def _prepare(y, theta, spec, check):
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if y.ndim != 2 or y.shape[1] != spec.N:
        raise ValueError(f"y must have shape (T, {spec.N}), got {y.shape}")
    if y.shape[0] < 1:
        raise ValueError("y must contain at least one time point")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    if check:
        problems = validate(theta, spec)
        if problems:
            raise ValueError("invalid parameters: " + "; ".join(problems))
    return y, system_matrices(theta, spec)


def _run_filter(y, sm: SystemMatrices) -> FilterStats:
    Wp, Wf, xp, Vp, xf, Vf, ll, status = _kernels.kim_filter_kernel(
        y, sm.A, sm.Q, sm.C, sm.R, sm.mu, sm.Sigma, sm.pi, sm.Z, INNOVATION_RIDGE,
        *sm.measurement_terms(y))
    if status >= 0:
        raise NumericalFailure(f"innovation covariance not positive definite at t={status}",
                               t=int(status))
    return FilterStats(Wp, Wf, xp, Vp, xf, Vf, ll)


def kim_filter(y, theta: ThetaParams, spec: ModelSpec, check: bool = True) -> FilterStats:
    """Forward Kim filter with depth-one collapsing over regime pairs."""
    y, sm = _prepare(y, theta, spec, check)
    return _run_filter(y, sm)


def kim_smoother(y, theta: ThetaParams, spec: ModelSpec, check: bool = True) -> SmoothedStats:
    """Kim filter followed by the collapsed backward pass."""
    y, sm = _prepare(y, theta, spec, check)
    filt = _run_filter(y, sm)
    Ws, xs, Vs, Wpair, Plag, Pcross = _kernels.kim_smoother_kernel(
        filt.W_filt, filt.x_filt, filt.V_filt, sm.A, sm.Q, sm.Z)
    Ws = Ws / Ws.sum(axis=1, keepdims=True)
    return SmoothedStats(Ws, xs, Vs, Wpair, Plag, Pcross, filt.loglik, filt)


def regime_path_logprob(S, pi, Z) -> float:
    """log P(S) under the chain (pi, Z), with zero probabilities floored."""
    S = np.asarray(S)
    floor = _kernels.PROB_FLOOR
    lp = np.log(max(pi[S[0]], floor))
    if S.size > 1:
        lp += np.log(np.maximum(np.asarray(Z)[S[:-1], S[1:]], floor)).sum()
    return float(lp)


def kalman_fixed_regime(y, theta: ThetaParams, spec: ModelSpec, S,
                        check: bool = True) -> SmoothedStats:
    """Kalman filter and RTS smoother with the regime path pinned to ``S``.

    The returned statistics have one-hot regime weights. ``loglik`` is the
    complete log-density log p(y, S) = log p(y | S) + log P(S).
    """
    y, sm = _prepare(y, theta, spec, check)
    S = validate_labels(S, spec.M)
    if S.size != y.shape[0]:
        raise ValueError("regime path and data lengths differ")
    xf, Vf, ll, xs, Vs, Plag, Pcross, status = _kernels.kalman_fixed_kernel(
        y, S, sm.A, sm.Q, sm.C, sm.R, sm.mu, sm.Sigma, INNOVATION_RIDGE, *sm.measurement_terms(y))
    if status >= 0:
        raise NumericalFailure(f"innovation covariance not positive definite at t={status}",
                               t=int(status))
    T, M = S.size, spec.M
    W = np.zeros((T, M))
    W[np.arange(T), S] = 1.0
    W_pair = np.zeros((T, M, M))
    W_pair[np.arange(1, T), S[:-1], S[1:]] = 1.0
    rep = lambda X: np.repeat(X[:, None], M, axis=1)
    loglik = float(ll.sum()) + regime_path_logprob(S, theta.pi, theta.Z)
    return SmoothedStats(W, rep(xs), rep(Vs), W_pair, rep(Plag), rep(Pcross), loglik)


def decode_regimes(stats: SmoothedStats) -> np.ndarray:
    """Most probable regime per time point; ties go to the smallest label."""
    return np.argmax(stats.W, axis=1).astype(np.int64)


def dwell_times(stats: SmoothedStats) -> np.ndarray:
    return stats.W.mean(axis=0)


def loglik(y, theta: ThetaParams, spec: ModelSpec, check: bool = True) -> float:
    return kim_filter(y, theta, spec, check=check).loglik


__all__ = ["SystemMatrices", "system_matrices", "FilterStats", "SmoothedStats", "kim_filter",
           "kim_smoother", "kalman_fixed_regime", "decode_regimes", "dwell_times", "loglik",
           "regime_path_logprob"]

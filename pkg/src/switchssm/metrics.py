"""Accuracy metrics and identifiability alignment for comparing parameter sets."""

from __future__ import annotations

import numpy as np

from .core import Kind, ModelSpec, ThetaParams, match_regimes_by_classification, permute_regimes


def classification_rate(S_hat, S_true, M: int) -> float:
    """Best-permutation fraction of correctly labelled time points."""
    return match_regimes_by_classification(S_hat, S_true, M)[1]


def relative_l11(est, truth) -> float:
    """sum |est - truth| / sum |truth| over all entries."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    denom = np.abs(truth).sum()
    if denom == 0:
        raise ValueError("relative error undefined for an all-zero target")
    return float(np.abs(est - truth).sum() / denom)


def projection(C: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of C."""
    return C @ np.linalg.solve(C.T @ C, C.T)


def basis_map(C_hat: np.ndarray, C: np.ndarray) -> np.ndarray:
    """B minimizing ||C - C_hat B||_F."""
    return np.linalg.solve(C_hat.T @ C_hat, C_hat.T @ C)


def align_basis(theta: ThetaParams, reference: ThetaParams, spec: ModelSpec) -> ThetaParams:
    """Re-express ``theta`` in the state basis of ``reference``.

    For each state process, B = (C_hat'C_hat)^-1 C_hat'C maps the estimated
    observation matrix onto the reference one; then A_l -> B^-1 A_l B,
    Q -> B^-1 Q B^-T, C -> C_hat B and the initial moments follow. The var
    model has no latent basis and is returned unchanged.
    """
    if spec.kind is Kind.VAR:
        return theta
    M, p = spec.M, spec.p
    A, Q, C = np.array(theta.A), np.array(theta.Q), np.array(theta.C)
    mu, Sigma = np.array(theta.mu), np.array(theta.Sigma)
    for k in range(M):
        B = basis_map(theta.C[k], reference.C[k])
        Binv = np.linalg.inv(B)
        for l in range(p):
            A[k, l] = Binv @ theta.A[k, l] @ B
        Q[k] = Binv @ theta.Q[k] @ Binv.T
        C[k] = theta.C[k] @ B
        big = np.kron(np.eye(p), Binv)
        mu[k] = big @ theta.mu[k]
        Sigma[k] = big @ theta.Sigma[k] @ big.T
    return theta.replace(A=A, Q=Q, C=C, mu=mu, Sigma=Sigma)


def parameter_errors(theta_hat: ThetaParams, truth: ThetaParams, spec: ModelSpec) -> dict:
    """Relative L1,1 errors for A, Q, Z and (except var) C projections and R.

    ``theta_hat`` must already be regime-matched to ``truth``.
    """
    al = align_basis(theta_hat, truth, spec)
    out = {
        "A": relative_l11(al.A, truth.A),
        "Q": relative_l11(al.Q, truth.Q),
        "Z": relative_l11(theta_hat.Z, truth.Z),
    }
    if spec.kind is not Kind.VAR:
        k = 1 if spec.kind is Kind.DYN else spec.M
        out["C"] = relative_l11(np.stack([projection(theta_hat.C[j]) for j in range(k)]),
                                np.stack([projection(truth.C[j]) for j in range(k)]))
        out["R"] = relative_l11(theta_hat.R[0], truth.R[0])
    return out


def match_to_truth(theta_hat: ThetaParams, S_hat, S_true, M: int):
    """Permute estimated regimes onto true labels by classification agreement."""
    sigma, rate = match_regimes_by_classification(S_hat, S_true, M)
    return permute_regimes(theta_hat, sigma), np.asarray(sigma)[np.asarray(S_hat)], rate


__all__ = ["classification_rate", "relative_l11", "projection", "basis_map", "align_basis",
           "parameter_errors", "match_to_truth"]

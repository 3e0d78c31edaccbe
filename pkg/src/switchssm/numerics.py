"""Matrix kernels: spectral radius, stability shrinkage, stationary covariances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import NotStationary, companion_matrix, companion_noise, sym

# Above this condition number the companion matrix is treated as singular and
# the vectorized (Kronecker) route is used instead of the Sylvester route.
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CompanionSystem:
    """Order-1 representation (A_tilde, Q_tilde) of a VAR(p) state equation."""

    A_tilde: np.ndarray
    Q_tilde: np.ndarray

    @classmethod
    def from_blocks(cls, A_blocks: np.ndarray, Q: np.ndarray) -> "CompanionSystem":
        A_blocks = np.asarray(A_blocks, dtype=float)
        return cls(companion_matrix(A_blocks), companion_noise(np.asarray(Q, float), A_blocks.shape[0]))

    @property
    def dim(self) -> int:
        return self.A_tilde.shape[0]


def spectral_radius(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("spectral_radius expects a square matrix")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def shrink_to_stable(A_blocks: np.ndarray, epsilon: float = 0.02) -> np.ndarray:
    """Scale lag block l by ((1 - epsilon) / rho)**l when rho >= 1.

    Scaling lag l by c**l multiplies every companion eigenvalue by c, so the
    output has spectral radius exactly 1 - epsilon.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    A_blocks = np.asarray(A_blocks, dtype=float)
    rho = spectral_radius(companion_matrix(A_blocks))
    if rho < 1.0:
        return A_blocks.copy()
    c = (1.0 - epsilon) / rho
    powers = c ** np.arange(1, A_blocks.shape[0] + 1)
    return A_blocks * powers[:, None, None]


def _check_stable(A_tilde: np.ndarray) -> None:
    rho = spectral_radius(A_tilde)
    if rho >= 1.0:
        raise NotStationary(f"companion spectral radius {rho:.6g} >= 1")


def stationary_cov_sylvester(sys: CompanionSystem) -> np.ndarray:
    """Solve inv(A) S - S A' = inv(A) Q (requires invertible A)."""
    A, Q = sys.A_tilde, sys.Q_tilde
    Ainv = np.linalg.inv(A)
    S = linalg.solve_sylvester(Ainv, -A.T, Ainv @ Q)
    return sym(S)


def duplication_matrix(n: int) -> np.ndarray:
    """0/1 matrix D with vec(S) = D vech(S) for symmetric n x n S (column-major)."""
    rows = []
    index = {}
    k = 0
    for j in range(n):
        for i in range(j, n):
            index[(i, j)] = k
            k += 1
    D = np.zeros((n * n, k))
    for j in range(n):
        for i in range(n):
            D[j * n + i, index[(max(i, j), min(i, j))]] = 1.0
    return D


def stationary_cov_vectorized(sys: CompanionSystem, reduced: bool = False) -> np.ndarray:
    """Solve (I - A kron A) vec(S) = vec(Q).

    With ``reduced=True`` only the n(n+1)/2 distinct entries of the symmetric
    solution are unknowns (vec(S) = D vech(S)); the overdetermined but
    consistent system is solved by least squares.
    """
    A, Q = sys.A_tilde, sys.Q_tilde
    n = A.shape[0]
    K = np.eye(n * n) - np.kron(A, A)
    q = Q.reshape(-1, order="F")
    if reduced:
        D = duplication_matrix(n)
        v, *_ = np.linalg.lstsq(K @ D, q, rcond=None)
        vec = D @ v
    else:
        vec = np.linalg.solve(K, q)
    return sym(vec.reshape(n, n, order="F"))


def lyapunov_residual(sys: CompanionSystem, S: np.ndarray) -> float:
    A, Q = sys.A_tilde, sys.Q_tilde
    return float(np.max(np.abs(S - A @ S @ A.T - Q)))


def stationary_cov_companion(sys: CompanionSystem) -> np.ndarray:
    """Stationary covariance of the companion process.

    Uses the Sylvester route when the companion matrix is well conditioned and
    the Kronecker route otherwise (or when the Sylvester residual is too large).
    """
    _check_stable(sys.A_tilde)
    tol = 1e-9 * (1.0 + np.max(np.abs(sys.Q_tilde)))
    cond = np.linalg.cond(sys.A_tilde)
    if np.isfinite(cond) and cond < COND_LIMIT:
        S = stationary_cov_sylvester(sys)
        if np.all(np.isfinite(S)) and lyapunov_residual(sys, S) <= tol:
            return S
    return stationary_cov_vectorized(sys)


def cross_lag_cov(sys: CompanionSystem, Sigma: np.ndarray, max_lag: int) -> list[np.ndarray]:
    """Cov(x_t, x_{t-l}) = A^l Sigma for l = 0..max_lag."""
    out = [np.array(Sigma, dtype=float)]
    for _ in range(max_lag):
        out.append(sys.A_tilde @ out[-1])
    return out


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """A factor L with L L' = S for symmetric PSD S (possibly singular)."""
    S = sym(np.asarray(S, dtype=float))
    if S.size == 0:
        return S
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


def floor_eigenvalues(S: np.ndarray, floor: float) -> np.ndarray:
    S = sym(S)
    w, V = np.linalg.eigh(S)
    if w.min() >= floor:
        return S
    return sym((V * np.maximum(w, floor)) @ V.T)


__all__ = ["CompanionSystem", "spectral_radius", "shrink_to_stable", "stationary_cov_sylvester",
           "stationary_cov_vectorized", "stationary_cov_companion", "lyapunov_residual",
           "cross_lag_cov", "psd_sqrt", "floor_eigenvalues", "duplication_matrix"]

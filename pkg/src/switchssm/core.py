"""Domain types, parameter validation and regime-label utilities.

Regime labels are 0-based integers internally. Files written by the CLI use
1-based labels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np


class NotStationary(ValueError):
    """Raised when a regime's companion matrix has spectral radius >= 1."""

    def __init__(self, message: str, regime: Optional[int] = None):
        super().__init__(message)
        self.regime = regime


class NumericalFailure(RuntimeError):
    """A filter or EM pass broke down (non-PD covariance, NaN, ...)."""

    def __init__(self, message: str, t: Optional[int] = None, iteration: Optional[int] = None,
                 best=None):
        super().__init__(message)
        self.t = t
        self.iteration = iteration
        self.best = best


class SingularMoment(NumericalFailure):
    pass


class RankDeficient(ValueError):
    pass


class Kind(str, Enum):
    DYN = "dyn"
    VAR = "var"
    OBS = "obs"


EQUALITY_TARGETS = frozenset({"A", "C", "Q", "Sigma", "mu"})


@dataclass(frozen=True)
class ConstraintSet:
    """Constraints applied in the M-step.

    ``fixed_A`` and ``fixed_C`` are ``(mask, values)`` pairs; ``mask`` is True
    where a coefficient is pinned. Masks for A have shape (M, p, r, r) and for
    C shape (M, N, r); anything broadcastable to those shapes is accepted.
    """

    fixed_A: Optional[tuple] = None
    fixed_C: Optional[tuple] = None
    diag_Q: bool = False
    diag_R: bool = False
    diag_Sigma: bool = False
    scale_C: Optional[np.ndarray] = None
    equal_across_regimes: frozenset = frozenset()
    stable_A: bool = True
    epsilon: float = 0.02

    def __post_init__(self):
        eq = frozenset(self.equal_across_regimes)
        bad = eq - EQUALITY_TARGETS
        if bad:
            raise ValueError(f"unknown equality targets {sorted(bad)}")
        object.__setattr__(self, "equal_across_regimes", eq)
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("fixed_A", "fixed_C"):
            pair = getattr(self, name)
            if pair is None:
                continue
            mask, values = pair
            mask = np.asarray(mask, dtype=bool)
            values = np.asarray(values, dtype=float)
            if not np.all(np.isfinite(np.where(mask, values, 0.0))):
                raise ValueError(f"{name}: pinned values must be finite")
            object.__setattr__(self, name, (mask, values))
        if self.scale_C is not None:
            sc = np.asarray(self.scale_C, dtype=float)
            if np.any(sc <= 0):
                raise ValueError("scale_C targets must be positive")
            object.__setattr__(self, "scale_C", sc)

    def expanded_fixed_A(self, M, p, r):
        if self.fixed_A is None:
            return None
        mask, values = self.fixed_A
        shape = (M, p, r, r)
        return np.broadcast_to(mask, shape).copy(), np.broadcast_to(values, shape).copy()

    def expanded_fixed_C(self, M, N, r):
        if self.fixed_C is None:
            return None
        mask, values = self.fixed_C
        shape = (M, N, r)
        return np.broadcast_to(mask, shape).copy(), np.broadcast_to(values, shape).copy()


@dataclass(frozen=True)
class ModelSpec:
    """Model kind and hyperparameters (M, p, r, N) plus constraints."""

    kind: Kind
    M: int
    p: int
    r: int
    N: int
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.VAR:
            object.__setattr__(self, "r", self.N)
        if self.M < 1 or self.p < 1 or self.r < 1 or self.N < 1:
            raise ValueError("M, p, r, N must all be >= 1")
        if self.r > self.N:
            raise ValueError("state dimension r cannot exceed N")

    @property
    def d(self) -> int:
        """Companion state dimension p*r of one state process."""
        return self.p * self.r

    @property
    def joint_dim(self) -> int:
        return self.M * self.d if self.kind is Kind.OBS else self.d


def companion_matrix(blocks: np.ndarray) -> np.ndarray:
    """Stack lag blocks (p, r, r) into the (pr, pr) companion matrix."""
    blocks = np.asarray(blocks, dtype=float)
    p, r, _ = blocks.shape
    out = np.zeros((p * r, p * r))
    out[:r, :] = np.concatenate(list(blocks), axis=1)
    if p > 1:
        out[r:, :-r] = np.eye((p - 1) * r)
    return out


def companion_noise(Q: np.ndarray, p: int) -> np.ndarray:
    r = Q.shape[0]
    out = np.zeros((p * r, p * r))
    out[:r, :r] = Q
    return out


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -1, -2))


@dataclass(frozen=True, eq=False)
class ThetaParams:
    """Full parameter set of a switching state-space model.

    Shapes: A (M, p, r, r) lag blocks, C (M, N, r), Q (M, r, r), R (M, N, N),
    mu (M, p*r), Sigma (M, p*r, p*r), pi (M,), Z (M, M). Shared quantities
    (C and R in the switching-dynamics model) are stored as identical copies.
    For the switching-observations model, A/Q/mu/Sigma index the M parallel
    state processes and C index the regimes.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    pi: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "Q", "R", "mu", "Sigma", "pi", "Z"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def r(self) -> int:
        return self.A.shape[2]

    @property
    def N(self) -> int:
        return self.C.shape[1]

    @cached_property
    def A_companion(self) -> np.ndarray:
        """Companion matrices, shape (M, pr, pr)."""
        return np.stack([companion_matrix(a) for a in self.A])

    @cached_property
    def Q_companion(self) -> np.ndarray:
        return np.stack([companion_noise(q, self.p) for q in self.Q])

    def replace(self, **changes) -> "ThetaParams":
        return replace(self, **changes)

    def copy(self) -> "ThetaParams":
        return self.replace()

    def allclose(self, other: "ThetaParams", atol=1e-12, rtol=0.0) -> bool:
        return all(
            np.allclose(getattr(self, n), getattr(other, n), atol=atol, rtol=rtol)
            for n in ("A", "C", "Q", "R", "mu", "Sigma", "pi", "Z")
        )

    def as_dict(self) -> dict:
        return {n: getattr(self, n).tolist() for n in ("A", "C", "Q", "R", "mu", "Sigma", "pi", "Z")}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaParams":
        return cls(**{n: np.asarray(d[n], dtype=float) for n in ("A", "C", "Q", "R", "mu", "Sigma", "pi", "Z")})


def _psd_violation(X: np.ndarray, tol: float = 1e-10) -> Optional[float]:
    Xs = sym(X)
    ev = np.linalg.eigvalsh(Xs)
    scale = max(1.0, float(np.max(np.abs(ev)))) if ev.size else 1.0
    if ev.min() < -tol * scale:
        return float(ev.min())
    return None


def validate(theta: ThetaParams, spec: ModelSpec) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    from .numerics import spectral_radius

    out: list[str] = []
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    d = p * r
    expected = {
        "A": (M, p, r, r), "C": (M, N, r), "Q": (M, r, r), "R": (M, N, N),
        "mu": (M, d), "Sigma": (M, d, d), "pi": (M,), "Z": (M, M),
    }
    for name, shape in expected.items():
        arr = getattr(theta, name)
        if arr.shape != shape:
            out.append(f"{name} has shape {arr.shape}, expected {shape}")
        elif not np.all(np.isfinite(arr)):
            out.append(f"{name} contains non-finite entries")
    if out:
        return out

    for name in ("Q", "R", "Sigma"):
        for j, X in enumerate(getattr(theta, name)):
            if not np.allclose(X, X.T, atol=1e-8 * max(1.0, np.abs(X).max())):
                out.append(f"{name}_{j + 1} is not symmetric")
            ev = _psd_violation(X)
            if ev is not None:
                out.append(f"{name}_{j + 1} is not PSD (eigenvalue {ev:.3g})")

    pi, Z = theta.pi, theta.Z
    if np.any(pi < -1e-12) or np.any(pi > 1 + 1e-12):
        out.append("pi has entries outside [0, 1]")
    if abs(pi.sum() - 1.0) > 1e-8:
        out.append(f"pi sums to {pi.sum():.6g}")
    for i, row in enumerate(Z):
        if np.any(row < -1e-12) or np.any(row > 1 + 1e-12):
            out.append(f"Z row {i + 1} has entries outside [0, 1]")
        if abs(row.sum() - 1.0) > 1e-8:
            out.append(f"Z row {i + 1} sums to {row.sum():.6g}")

    if spec.kind is Kind.VAR:
        if not np.allclose(theta.C, np.eye(N)):
            out.append("C must be the identity for the switching VAR model")
        if np.any(theta.R != 0):
            out.append("R must be zero for the switching VAR model")
    else:
        if not all(np.allclose(theta.R[j], theta.R[0]) for j in range(M)):
            out.append("R must be shared across regimes")
        if spec.kind is Kind.DYN and not all(np.allclose(theta.C[j], theta.C[0]) for j in range(M)):
            out.append("C must be shared across regimes in the switching-dynamics model")

    cons = spec.constraints
    if cons.stable_A:
        for j, Ac in enumerate(theta.A_companion):
            rho = spectral_radius(Ac)
            if rho >= 1.0:
                out.append(f"A_{j + 1} companion spectral radius {rho:.6g} >= 1")
    fa = cons.expanded_fixed_A(M, p, r)
    if fa is not None:
        mask, vals = fa
        if not np.allclose(theta.A[mask], vals[mask]):
            out.append("A violates pinned coefficients")
    fc = cons.expanded_fixed_C(M, N, r)
    if fc is not None and spec.kind is not Kind.VAR:
        mask, vals = fc
        if not np.allclose(theta.C[mask], vals[mask]):
            out.append("C violates pinned coefficients")
    return out


def validate_labels(S: Sequence[int], M: int) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim != 1:
        raise ValueError("regime sequence must be one-dimensional")
    if S.size and (S.min() < 0 or S.max() >= M):
        raise ValueError(f"regime labels must lie in 0..{M - 1}")
    return S.astype(np.int64)


def match_regimes_by_classification(S_hat, S_true, M: int) -> tuple[np.ndarray, float]:
    """Best label permutation mapping estimated regimes onto true ones.

    Returns ``(sigma, rate)`` where ``sigma[k]`` is the true label assigned to
    estimated label ``k`` and ``rate`` the fraction of agreeing time points.
    Ties go to the lexicographically smallest permutation.
    """
    if M > 8:
        raise ValueError("exhaustive permutation search is limited to M <= 8")
    S_hat = validate_labels(S_hat, M)
    S_true = validate_labels(S_true, M)
    if S_hat.shape != S_true.shape:
        raise ValueError("regime sequences must have equal length")
    T = S_hat.size
    confusion = np.zeros((M, M), dtype=np.int64)
    np.add.at(confusion, (S_hat, S_true), 1)
    best, best_count = None, -1
    for perm in itertools.permutations(range(M)):
        count = int(confusion[np.arange(M), perm].sum())
        if count > best_count:
            best, best_count = perm, count
    return np.array(best, dtype=np.int64), best_count / T if T else 1.0


def check_permutation(sigma, M: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != (M,) or sorted(sigma.tolist()) != list(range(M)):
        raise ValueError(f"{sigma.tolist()} is not a permutation of 0..{M - 1}")
    return sigma


def permute_regimes(theta: ThetaParams, sigma) -> ThetaParams:
    """Relabel regimes so that old regime ``k`` becomes regime ``sigma[k]``."""
    sigma = check_permutation(sigma, theta.M)
    inv = np.argsort(sigma)
    return ThetaParams(
        A=theta.A[inv], C=theta.C[inv], Q=theta.Q[inv], R=theta.R[inv],
        mu=theta.mu[inv], Sigma=theta.Sigma[inv], pi=theta.pi[inv],
        Z=theta.Z[np.ix_(inv, inv)],
    )


def relabel(S, sigma) -> np.ndarray:
    return np.asarray(sigma)[np.asarray(S)]


def transition_counts(S: Iterable[int], M: int) -> tuple[np.ndarray, np.ndarray]:
    """Hard-label estimates of (pi, Z); rows never visited fall back to 1/M."""
    S = np.asarray(list(S) if not isinstance(S, np.ndarray) else S, dtype=np.int64)
    pi = np.zeros(M)
    pi[S[0]] = 1.0
    counts = np.zeros((M, M))
    np.add.at(counts, (S[:-1], S[1:]), 1.0)
    rows = counts.sum(axis=1)
    Z = np.full((M, M), 1.0 / M)
    nz = rows > 0
    Z[nz] = counts[nz] / rows[nz, None]
    return pi, Z

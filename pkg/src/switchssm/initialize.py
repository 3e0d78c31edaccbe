"""Starting values for EM, binary segmentation and the sliding-window baseline.

The switching-dynamics recipe: SVD of the centred data gives C and state
estimates; the time range is cut into kappa intervals, a VAR(p) is fitted by
OLS on each, the (A, Q) fits are clustered with K-means into M groups and
each group is refitted. Hard regime labels give pi and Z.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans

from .core import Kind, ModelSpec, RankDeficient, ThetaParams, transition_counts
from .numerics import floor_eigenvalues, shrink_to_stable

KMEANS_RESTARTS = 10
COV_FLOOR = 1e-8


@dataclass(frozen=True)
class SegmentPlan:
    """Partition of 0..T-1 into contiguous half-open intervals [start, stop)."""

    intervals: tuple
    kappa: int

    def __post_init__(self):
        iv = tuple((int(a), int(b)) for a, b in self.intervals)
        if not iv:
            raise ValueError("segment plan needs at least one interval")
        if iv[0][0] != 0 or any(a1 != b0 for (_, b0), (a1, _) in zip(iv, iv[1:])):
            raise ValueError("intervals must be contiguous and start at 0")
        if any(b <= a for a, b in iv):
            raise ValueError("intervals must be nonempty")
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "kappa", len(iv))

    @property
    def T(self) -> int:
        return self.intervals[-1][1]

    @classmethod
    def equal(cls, T: int, kappa: int) -> "SegmentPlan":
        edges = np.round(np.linspace(0, T, kappa + 1)).astype(int)
        return cls(tuple(zip(edges[:-1], edges[1:])), kappa)

    @classmethod
    def from_change_points(cls, T: int, cps) -> "SegmentPlan":
        edges = [0] + sorted(int(c) for c in cps) + [T]
        return cls(tuple(zip(edges[:-1], edges[1:])), len(edges) - 1)

    def labels(self, cluster_of_interval) -> np.ndarray:
        S = np.empty(self.T, dtype=np.int64)
        for (a, b), c in zip(self.intervals, cluster_of_interval):
            S[a:b] = c
        return S


def default_kappa(T: int, M: int, p: int, r: int) -> int:
    k = T // (10 * p * r)
    return int(min(max(k, M + 1), 50))


# ------------------------------------------------------------------ VAR by OLS

def var_design(x: np.ndarray, p: int):
    """Targets x_t (t >= p) and stacked lags [x_{t-1}, ..., x_{t-p}]."""
    T = x.shape[0]
    if T <= p:
        r = x.shape[1]
        return np.empty((0, r)), np.empty((0, p * r))
    Y = x[p:]
    X = np.concatenate([x[p - l - 1:T - l - 1] for l in range(p)], axis=1)
    return Y, X


def ols_from_design(Y: np.ndarray, X: np.ndarray, p: int):
    """OLS lag blocks (p, r, r) and residual covariance (divided by n)."""
    r = Y.shape[1]
    if Y.shape[0] == 0:
        return np.zeros((p, r, r)), np.eye(r)
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    A_wide = coef.T
    E = Y - X @ coef
    Q = E.T @ E / Y.shape[0]
    A = np.stack([A_wide[:, l * r:(l + 1) * r] for l in range(p)])
    return A, 0.5 * (Q + Q.T)


def fit_var_ols(x: np.ndarray, p: int):
    return ols_from_design(*var_design(x, p), p)


def _pooled_ols(x, p, segments):
    """OLS on the union of the segments' design rows (lags stay within a segment)."""
    parts = [var_design(x[a:b], p) for a, b in segments]
    Y = np.concatenate([P[0] for P in parts])
    X = np.concatenate([P[1] for P in parts])
    return ols_from_design(Y, X, p)


def _segment_sse(x: np.ndarray, p: int):
    """Prefix sums for O(1) VAR(p) residual sums of squares on any segment."""
    T, r = x.shape
    Y, X = var_design(x, p)  # row i corresponds to t = i + p
    zz = np.einsum("ti,tj->tij", X, X)
    zy = np.einsum("ti,tj->tij", X, Y)
    yy = np.einsum("ti,ti->t", Y, Y)
    pre = lambda a: np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
    Czz, Czy, Cyy = pre(zz), pre(zy), pre(yy)
    ridge = 1e-10 * max(np.trace(Czz[-1]) / max(X.shape[1], 1), 1e-300)

    def sse(a: int, b: int) -> float:
        lo, hi = a, b - p  # rows with t in [a + p, b)
        if hi <= lo:
            return 0.0
        G = Czz[hi] - Czz[lo]
        H = Czy[hi] - Czy[lo]
        s = Cyy[hi] - Cyy[lo]
        coef = np.linalg.solve(G + ridge * np.eye(G.shape[0]), H)
        return float(max(s - np.sum(H * coef), 0.0))

    return sse


def binary_segmentation(xhat: np.ndarray, p: int, epsilon: float = 0.05,
                        min_len: Optional[int] = None) -> list[int]:
    """Recursive SSE-reduction splitting of a (T, r) series; returns change points.

    A change point tau starts a new segment. A split of segment [a, b) at tau
    is accepted when SSE(a, tau) + SSE(tau, b) <= (1 - epsilon) SSE(a, b).
    ``min_len`` bounds segment lengths from below (default p + 4 p r).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    xhat = np.asarray(xhat, dtype=float)
    T, r = xhat.shape
    if min_len is None:
        min_len = p + 4 * p * r
    if min_len < p + 1:
        raise ValueError("min_len must be at least p + 1")
    sse = _segment_sse(xhat, p)
    cps = []
    stack = [(0, T)]
    while stack:
        a, b = stack.pop()
        if b - a < 2 * min_len:
            continue
        total = sse(a, b)
        if total <= 0.0:
            continue
        taus = range(a + min_len, b - min_len + 1)
        costs = [sse(a, t) + sse(t, b) for t in taus]
        i = int(np.argmin(costs))
        if costs[i] <= (1.0 - epsilon) * total:
            tau = taus[i]
            cps.append(tau)
            stack.extend([(a, tau), (tau, b)])
    return sorted(cps)


# ------------------------------------------------------------------- K-means

def _kmeans(features: np.ndarray, M: int, seed) -> np.ndarray:
    """K-means labels relabelled by order of first appearance."""
    n = features.shape[0]
    if M == 1 or n == 0:
        return np.zeros(n, dtype=np.int64)
    uniq = np.unique(features, axis=0).shape[0]
    k = min(M, uniq)
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    km = KMeans(n_clusters=k, n_init=KMEANS_RESTARTS, random_state=seed).fit(features)
    raw = km.labels_
    order = {}
    for lab in raw:
        if lab not in order:
            order[lab] = len(order)
    return np.array([order[l] for l in raw], dtype=np.int64)


def _standardize(F: np.ndarray) -> np.ndarray:
    sd = F.std(axis=0)
    sd[sd == 0] = 1.0
    return (F - F.mean(axis=0)) / sd


def _vech(S: np.ndarray) -> np.ndarray:
    return S[np.tril_indices(S.shape[0])]


def cluster_intervals(x: np.ndarray, p: int, plan: SegmentPlan, M: int, seed=0) -> np.ndarray:
    """Cluster per-interval (A, Q) OLS fits; returns the hard regime path."""
    feats = []
    for a, b in plan.intervals:
        A, Q = fit_var_ols(x[a:b], p)
        feats.append(np.concatenate([A.ravel(), _vech(Q)]))
    labels = _kmeans(_standardize(np.array(feats)), M, seed)
    return plan.labels(labels)


# ------------------------------------------------------------ initializers

def _check_kappa(T, spec, kappa):
    if kappa is None:
        kappa = default_kappa(T, spec.M, spec.p, spec.r)
    kappa = int(kappa)
    if kappa < 1 or kappa * (spec.p + 1) > T:
        raise ValueError(f"kappa={kappa} is incompatible with T={T} and p={spec.p}")
    return kappa


def svd_states(y: np.ndarray, r: int, center: bool = True):
    """(C_hat (N, r), x_hat (T, r), residual (T, N)) from the rank-r SVD."""
    Yc = y - y.mean(axis=0) if center else y
    U, s, Vt = np.linalg.svd(Yc.T, full_matrices=False)
    if s.size < r or s[r - 1] <= 1e-12 * max(s[0], 1e-300):
        raise RankDeficient(f"data matrix has rank below r={r}")
    C = U[:, :r]
    X = (s[:r, None] * Vt[:r]).T
    return C, X, Yc - X @ C.T


def _initial_moments(x: np.ndarray, p: int):
    """Mean of the first p state estimates and the matching covariance."""
    r = x.shape[1]
    first = x[:p]
    mu = np.tile(first.mean(axis=0), p)
    if p > 1:
        var = np.maximum(first.var(axis=0), COV_FLOOR * max(x.var(), 1e-300))
        Sigma = np.kron(np.eye(p), np.diag(var))
    else:
        Sigma = np.eye(r)
    return mu, Sigma


def _regime_fits(x, p, segments_by_regime, M, epsilon, fallback=None):
    r = x.shape[1]
    A = np.empty((M, p, r, r))
    Q = np.empty((M, r, r))
    for j in range(M):
        segs = segments_by_regime[j]
        n_rows = sum(max(b - a - p, 0) for a, b in segs)
        if n_rows == 0 and fallback is not None:
            A[j], Q[j] = fallback
            continue
        Aj, Qj = _pooled_ols(x, p, segs) if segs else (np.zeros((p, r, r)), np.eye(r))
        A[j] = shrink_to_stable(Aj, epsilon)
        Q[j] = floor_eigenvalues(Qj, COV_FLOOR * max(np.trace(Qj) / r, 1e-12))
    return A, Q


def _segments_of(S: np.ndarray, M: int):
    """Runs of constant label, grouped by label."""
    out = [[] for _ in range(M)]
    start = 0
    for t in range(1, S.size + 1):
        if t == S.size or S[t] != S[start]:
            out[S[start]].append((start, t))
            start = t
    return out


def regimes_from_states(x, spec, kappa=None, segmentation="equal", seed=0,
                        bs_epsilon=0.05):
    T = x.shape[0]
    if segmentation == "binary":
        plan = SegmentPlan.from_change_points(T, binary_segmentation(x, spec.p, bs_epsilon))
    elif segmentation == "equal":
        plan = SegmentPlan.equal(T, _check_kappa(T, spec, kappa))
    else:
        raise ValueError("segmentation must be 'equal' or 'binary'")
    return cluster_intervals(x, spec.p, plan, spec.M, seed)


def _state_init(x, spec, S, epsilon):
    M, p = spec.M, spec.p
    A, Q = _regime_fits(x, p, _segments_of(S, M), M, epsilon,
                        fallback=fit_var_ols(x, p))
    pi, Z = transition_counts(S, M)
    mu, Sigma = _initial_moments(x, p)
    return A, Q, np.stack([mu] * M), np.stack([Sigma] * M), pi, Z


def init_dyn(y, spec: ModelSpec, kappa: Optional[int] = None, seed=0,
             segmentation: str = "equal", S: Optional[np.ndarray] = None,
             return_regimes: bool = False):
    """Switching-dynamics starting values.

    ``S`` replaces the clustering step with a given regime path (oracle
    initialization). With ``return_regimes`` the hard path is returned too.
    """
    y = np.asarray(y, dtype=float)
    M, N, r = spec.M, spec.N, spec.r
    C, x, resid = svd_states(y, r)
    R = np.diag(np.maximum(resid.var(axis=0), COV_FLOOR * max(y.var(), 1e-300)))
    if S is None:
        S = regimes_from_states(x, spec, kappa, segmentation, seed)
    A, Q, mu, Sigma, pi, Z = _state_init(x, spec, S, spec.constraints.epsilon)
    theta = ThetaParams(A=A, C=np.stack([C] * M), Q=Q, R=np.stack([R] * M), mu=mu,
                        Sigma=Sigma, pi=pi, Z=Z)
    return (theta, S) if return_regimes else theta


def init_var(y, spec: ModelSpec, kappa: Optional[int] = None, seed=0,
             segmentation: str = "equal", S: Optional[np.ndarray] = None,
             return_regimes: bool = False):
    """Switching-VAR starting values: the same recipe with x_hat = y."""
    y = np.asarray(y, dtype=float)
    M, N = spec.M, spec.N
    if S is None:
        S = regimes_from_states(y, spec, kappa, segmentation, seed)
    A, Q, mu, Sigma, pi, Z = _state_init(y, spec, S, spec.constraints.epsilon)
    theta = ThetaParams(A=A, C=np.stack([np.eye(N)] * M), Q=Q, R=np.zeros((M, N, N)),
                        mu=mu, Sigma=Sigma, pi=pi, Z=Z)
    return (theta, S) if return_regimes else theta


def init_obs(y, spec: ModelSpec, kappa: Optional[int] = None, seed=0,
             segmentation: str = "equal", S: Optional[np.ndarray] = None,
             return_regimes: bool = False):
    """Switching-observations starting values from per-regime SVDs."""
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    eps = spec.constraints.epsilon
    if S is None:
        _, S = init_dyn(y, ModelSpec(Kind.DYN, M, p, r, N), kappa, seed, segmentation,
                        return_regimes=True)
    S = np.asarray(S, dtype=np.int64)
    counts = np.bincount(S, minlength=M)
    min_rows = max(r, p * r + p + 1)
    big = int(np.argmax(counts))
    empty = [j for j in range(M) if counts[j] < min_rows]
    if empty:
        warnings.warn(f"regimes {[j + 1 for j in empty]} have too few points for an "
                      f"initial fit; using the parameters of regime {big + 1}",
                      RuntimeWarning, stacklevel=2)
    fits = {}
    R = np.zeros((N, N))
    for j in range(M):
        if j in empty:
            continue
        Yj = y[S == j]
        Cj, xj, resid = svd_states(Yj, r, center=False)
        Aj, Qj = fit_var_ols(xj, p)
        Aj = shrink_to_stable(Aj, eps)
        Qj = floor_eigenvalues(Qj, COV_FLOOR * max(np.trace(Qj) / r, 1e-12))
        mu, Sigma = _initial_moments(xj, p)
        fits[j] = (Cj, Aj, Qj, mu, Sigma)
        Rj = np.cov(resid.T, bias=True) if Yj.shape[0] > 1 else np.zeros((N, N))
        R += (counts[j] / T) * np.atleast_2d(Rj)
    if big in empty:
        raise ValueError("no regime has enough points for an initial fit")
    w_used = sum(counts[j] for j in fits) / T
    R = R / w_used
    R = floor_eigenvalues(0.5 * (R + R.T), COV_FLOOR * max(np.trace(R) / N, 1e-12))
    for j in empty:
        fits[j] = fits[big]
    C = np.stack([fits[j][0] for j in range(M)])
    A = np.stack([fits[j][1] for j in range(M)])
    Q = np.stack([fits[j][2] for j in range(M)])
    mu = np.stack([fits[j][3] for j in range(M)])
    Sigma = np.stack([fits[j][4] for j in range(M)])
    pi, Z = transition_counts(S, M)
    theta = ThetaParams(A=A, C=C, Q=Q, R=np.stack([R] * M), mu=mu, Sigma=Sigma, pi=pi, Z=Z)
    return (theta, S) if return_regimes else theta


def initialize(y, spec: ModelSpec, kappa: Optional[int] = None, seed=0, **kw):
    """Dispatch on the model kind."""
    fn = {Kind.DYN: init_dyn, Kind.VAR: init_var, Kind.OBS: init_obs}[spec.kind]
    return fn(y, spec, kappa, seed, **kw)


# ------------------------------------------------------ sliding-window K-means

def sliding_window_km(y, M: int, window_len: int = 31, stride: int = 1, seed=0):
    """Windowed-covariance K-means regimes and per-regime sample covariances."""
    y = np.asarray(y, dtype=float)
    T, N = y.shape
    if window_len < 2:
        raise ValueError("window length must be at least 2")
    if window_len > T:
        raise ValueError("window longer than the series")
    if stride < 1:
        raise ValueError("stride must be positive")
    starts = np.arange(0, T - window_len + 1, stride)
    tril = np.tril_indices(N)
    feats = np.array([np.cov(y[s:s + window_len].T, bias=False).reshape(N, N)[tril]
                      for s in starts])
    labels = _kmeans(feats, M, seed)
    centers = starts + window_len // 2
    nearest = np.clip(np.searchsorted(centers, np.arange(T)), 0, len(centers) - 1)
    # choose the closer of the two neighbouring centres
    prev = np.clip(nearest - 1, 0, len(centers) - 1)
    use_prev = np.abs(centers[prev] - np.arange(T)) < np.abs(centers[nearest] - np.arange(T))
    idx = np.where(use_prev, prev, nearest)
    S = labels[idx]
    # relabel by order of first appearance along time
    order = {}
    for lab in S:
        if lab not in order:
            order[lab] = len(order)
    S = np.array([order[l] for l in S], dtype=np.int64)
    covs = np.zeros((M, N, N))
    for j in range(M):
        sel = y[S == j]
        if sel.shape[0] > 1:
            covs[j] = np.atleast_2d(np.cov(sel.T))
    return S, covs


__all__ = ["SegmentPlan", "default_kappa", "fit_var_ols", "binary_segmentation", "init_dyn",
           "init_var", "init_obs", "initialize", "sliding_window_km", "svd_states",
           "cluster_intervals"]

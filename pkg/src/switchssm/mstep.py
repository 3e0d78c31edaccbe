"""M-step: expected complete-data log-likelihood and its (constrained) maximizers.

Moments are organised around two kinds of units:

* state processes k = 0..M-1, each with its own (A_k, Q_k, mu_k, Sigma_k).
  In the dyn/var models process k is simply regime k. In the obs model all M
  processes evolve at every time point, so their moments are summed over the
  regime posterior.
* observation units j = 0..M-1 (one per regime) carrying the moments of the
  observation equation y_t = C_j x_t + w_t under S_t = j.

Matrices of lag coefficients are handled in "wide" form: A_k as an (r, p*r)
matrix [A_k1 ... A_kp].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Kind, ModelSpec, SingularMoment, ThetaParams, sym
from .kim import SmoothedStats
from .numerics import floor_eigenvalues, shrink_to_stable, spectral_radius
from .core import companion_matrix

LOG2PI = np.log(2.0 * np.pi)
GRAM_RIDGE = 1e-8
# regimes/processes with less posterior mass than this keep their old parameters
MIN_WEIGHT = 1e-6
# eigenvalue floors (relative): Q and R against their own trace, Sigma against tr(Q)
COV_FLOOR = 1e-10
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class SufficientMoments:
    """Posterior-weighted sums feeding the closed-form updates.

    State processes (leading index k):
      w2: sum_{t>=2} of the process weight
      S11: sum w P_t restricted to the top r x r block
      B1: sum w E[x_t x_{t-1}'] top r rows, shape (r, d)
      B2: sum w E[x_{t-1} x_{t-1}'], shape (d, d)
      W1, x1w, P1w: initial weight, weighted mean and second moment
    Observation units (leading index j):
      w_obs, Syx (N, r), Sxx (r, r), Syy (N, N)
    Regime chain: W1_regime (M,), Zcount (M, M).
    """

    w2: np.ndarray
    S11: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    W1: np.ndarray
    x1w: np.ndarray
    P1w: np.ndarray
    w_obs: np.ndarray
    Syx: np.ndarray
    Sxx: np.ndarray
    Syy: np.ndarray
    W1_regime: np.ndarray
    Zcount: np.ndarray
    T: int

    @property
    def M(self) -> int:
        return self.W1_regime.shape[0]


def temper(stats: SmoothedStats, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Regime posteriors raised to the power beta and renormalized per t."""
    W, Wp = stats.W, stats.W_pair
    if beta == 1.0:
        return W, Wp
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    Wb = np.power(W, beta)
    Wb /= Wb.sum(axis=1, keepdims=True)
    Wpb = np.power(Wp, beta)
    Wpb[0] = 0.0
    tot = Wpb[1:].sum(axis=(1, 2), keepdims=True)
    Wpb[1:] /= tot
    return Wb, Wpb


def compute_moments(y: np.ndarray, stats: SmoothedStats, spec: ModelSpec,
                    beta: float = 1.0) -> SufficientMoments:
    y = np.asarray(y, dtype=float)
    W, Wpair = temper(stats, beta)
    T, M = W.shape
    r, d = spec.r, spec.d
    P = stats.P
    x = stats.x
    W2 = W[1:]
    if spec.kind is Kind.OBS:
        S11 = np.empty((M, r, r))
        B1 = np.empty((M, r, d))
        B2 = np.empty((M, d, d))
        x1w = np.empty((M, d))
        P1w = np.empty((M, d, d))
        for k in range(M):
            b = slice(k * d, (k + 1) * d)
            t_ = slice(k * d, k * d + r)
            S11[k] = np.einsum("tj,tjab->ab", W2, P[1:, :, t_, t_])
            B1[k] = np.einsum("tj,tjab->ab", W2, stats.P_cross[1:, :, t_, b])
            B2[k] = np.einsum("tj,tjab->ab", W2, stats.P_lag[1:, :, b, b])
            x1w[k] = W[0] @ x[0, :, b]
            P1w[k] = np.einsum("j,jab->ab", W[0], P[0, :, b, b])
        w2 = np.full(M, W2.sum())
        W1 = np.full(M, W[0].sum())
        obs_x = np.stack([x[:, j, j * d:j * d + r] for j in range(M)], axis=1)
        obs_P = np.stack([P[:, j, j * d:j * d + r, j * d:j * d + r] for j in range(M)], axis=1)
    else:
        S11 = np.einsum("tj,tjab->jab", W2, P[1:, :, :r, :r])
        B1 = np.einsum("tj,tjab->jab", W2, stats.P_cross[1:, :, :r, :])
        B2 = np.einsum("tj,tjab->jab", W2, stats.P_lag[1:])
        w2 = W2.sum(axis=0)
        W1 = W[0].copy()
        x1w = W[0][:, None] * x[0]
        P1w = W[0][:, None, None] * P[0]
        obs_x = x[:, :, :r]
        obs_P = P[:, :, :r, :r]
    w_obs = W.sum(axis=0)
    Syx = np.einsum("tj,tn,tja->jna", W, y, obs_x)
    Sxx = np.einsum("tj,tjab->jab", W, obs_P)
    Syy = np.einsum("tj,tn,tm->jnm", W, y, y)
    Zcount = Wpair[1:].sum(axis=0)
    return SufficientMoments(w2=w2, S11=sym(S11), B1=B1, B2=sym(B2), W1=W1, x1w=x1w,
                             P1w=sym(P1w), w_obs=w_obs, Syx=Syx, Sxx=sym(Sxx), Syy=sym(Syy),
                             W1_regime=W[0].copy(), Zcount=Zcount, T=T)


# ------------------------------------------------------------------- Q-function

def _wide(A_blocks: np.ndarray) -> np.ndarray:
    """(p, r, r) lag blocks -> (r, p*r)."""
    return np.concatenate(list(A_blocks), axis=1)


def _blocks(A_wide: np.ndarray, p: int) -> np.ndarray:
    r = A_wide.shape[0]
    return np.stack([A_wide[:, l * r:(l + 1) * r] for l in range(p)])


def _logdet_inv(S: np.ndarray):
    """(log|S|, S^-1) for symmetric PD S; raises if not PD."""
    try:
        L = np.linalg.cholesky(sym(S))
    except np.linalg.LinAlgError as exc:
        raise SingularMoment("covariance matrix is not positive definite") from exc
    Linv = np.linalg.inv(L)
    return 2.0 * np.log(np.diag(L)).sum(), Linv.T @ Linv


def gaussian_term(weight: float, S: np.ndarray, resid: np.ndarray) -> float:
    """-w/2 (n log 2pi + log|S|) - 1/2 tr(S^-1 resid)."""
    if weight <= 0.0 and not np.any(resid):
        return 0.0
    n = S.shape[0]
    logdet, Sinv = _logdet_inv(S)
    return -0.5 * weight * (n * LOG2PI + logdet) - 0.5 * float(np.sum(Sinv * resid))


def quad_resid(S0: np.ndarray, X: np.ndarray, B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """S0 - X B1' - B1 X' + X B2 X'."""
    XB1 = X @ B1.T
    return S0 - XB1 - XB1.T + X @ B2 @ X.T


def state_term(A_wide, Q, mom: SufficientMoments, k: int) -> float:
    return gaussian_term(mom.w2[k], Q, quad_resid(mom.S11[k], A_wide, mom.B1[k], mom.B2[k]))


def obs_term(C, R, mom: SufficientMoments, j: int) -> float:
    return gaussian_term(mom.w_obs[j], R, quad_resid(mom.Syy[j], C, mom.Syx[j], mom.Sxx[j]))


def init_term(mu, Sigma, mom: SufficientMoments, k: int) -> float:
    x1, w = mom.x1w[k], mom.W1[k]
    resid = mom.P1w[k] - np.outer(x1, mu) - np.outer(mu, x1) + w * np.outer(mu, mu)
    return gaussian_term(w, Sigma, resid)


def _xlogy(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    mask = a > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(a[mask] * np.log(b[mask])))


def _q_part(part: str, theta: ThetaParams, mom: SufficientMoments, spec: ModelSpec) -> float:
    M = spec.M
    if part == "obs":
        if spec.kind is Kind.VAR:
            return 0.0
        return sum(obs_term(theta.C[j], theta.R[j], mom, j) for j in range(M))
    if part == "state":
        return sum(state_term(_wide(theta.A[k]), theta.Q[k], mom, k) for k in range(M))
    if part == "init":
        return sum(init_term(theta.mu[k], theta.Sigma[k], mom, k) for k in range(M))
    return _xlogy(mom.W1_regime, theta.pi) + _xlogy(mom.Zcount, theta.Z)


Q_PARTS = ("obs", "state", "init", "regime")


def q_parts(theta: ThetaParams, mom: SufficientMoments, spec: ModelSpec) -> dict:
    """Q-function split into observation, state, initial-state and regime terms."""
    return {part: _q_part(part, theta, mom, spec) for part in Q_PARTS}


def q_function(theta: ThetaParams, mom: SufficientMoments, spec: ModelSpec) -> float:
    """Expected complete-data log-likelihood under the current posterior."""
    return float(sum(q_parts(theta, mom, spec).values()))


# --------------------------------------------------------------- linear solves

def _ridge(G: np.ndarray) -> np.ndarray:
    n = G.shape[0]
    return G + GRAM_RIDGE * (abs(np.trace(G)) / n + 1e-300) * np.eye(n)


def _solve_right(B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """X = B1 B2^-1 with ridge retry."""
    try:
        return np.linalg.solve(B2, B1.T).T
    except np.linalg.LinAlgError:
        pass
    try:
        X = np.linalg.solve(_ridge(B2), B1.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularMoment("Gram matrix is singular") from exc
    if not np.all(np.isfinite(X)):
        raise SingularMoment("Gram matrix is singular")
    return X


def quadratic_solve(terms, mask=None, values=None) -> np.ndarray:
    """Minimize sum_k tr{W_k(-2 B1_k X' + X B2_k X')} over X with pinned entries.

    ``terms`` is a list of (W, B1, B2). With no pins and a single term the
    solution is B1 B2^-1 regardless of W. Pinned entries (mask True) equal
    ``values``; the free block solves H_ff x_f = b_f - H_fc x_c where
    H = sum_k B2_k kron W_k and b = sum_k vec(W_k B1_k) (column-major vec).
    """
    n, m = terms[0][1].shape
    if mask is None or not np.any(mask):
        if len(terms) == 1:
            return _solve_right(terms[0][1], terms[0][2])
        mask = np.zeros((n, m), dtype=bool)
        values = np.zeros((n, m))
    mask = np.asarray(mask, dtype=bool)
    values = np.asarray(values, dtype=float)
    if mask.all():
        return values.copy()
    H = sum(np.kron(B2, W) for W, _, B2 in terms)
    b = sum((W @ B1).reshape(-1, order="F") for W, B1, _ in terms)
    free = ~mask.reshape(-1, order="F")
    xc = values.reshape(-1, order="F")[~free]
    Hff = H[np.ix_(free, free)]
    rhs = b[free] - H[np.ix_(free, ~free)] @ xc
    try:
        xf = np.linalg.solve(Hff, rhs)
    except np.linalg.LinAlgError:
        try:
            xf = np.linalg.solve(_ridge(Hff), rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularMoment("reduced system for pinned coefficients is singular") from exc
    vec = values.reshape(-1, order="F").copy()
    vec[free] = xf
    return vec.reshape(n, m, order="F")


def apply_fixed_constraints(terms, mask, values) -> np.ndarray:
    """Constrained maximizer of the quadratic form with pinned coefficients."""
    return quadratic_solve(terms, mask, values)


def apply_scaling_constraint(C_update, targets, W, B1, B2, max_iter: int = 100,
                             tol: float = 1e-8) -> np.ndarray:
    """Projected gradient for column-norm constraints ||C[:, i]|| = targets[i].

    Minimizes f(C) = tr{W(-2 B1 C' + C B2 C')} with step 1/lambda_max(B2 kron W)
    and projection by column rescaling. Returns the best feasible iterate.
    """
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (C_update.shape[1],))

    def project(C):
        norms = np.linalg.norm(C, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        out = C * (targets / norms)
        zero = np.linalg.norm(C, axis=0) == 0
        if np.any(zero):
            out[:, zero] = 0.0
            out[np.argmax(np.abs(W.diagonal())), zero] = targets[zero]
        return out

    def f(C):
        return float(np.sum(W * (-2.0 * B1 @ C.T + C @ B2 @ C.T)))

    lam = np.linalg.eigvalsh(sym(B2)).max() * np.linalg.eigvalsh(sym(W)).max()
    C = project(np.asarray(C_update, dtype=float))
    best, fbest = C, f(C)
    if lam <= 0:
        return best
    step = 1.0 / lam
    for _ in range(max_iter):
        grad = W @ C @ B2 - W @ B1
        C = project(C - step * grad)
        fc = f(C)
        if fc < fbest:
            improve = fbest - fc
            best, fbest = C, fc
            if improve < tol * (1.0 + abs(fbest)):
                break
        else:
            break
    return best


def apply_eigen_constraint(A_update, A_current, epsilon: float, q_value) -> np.ndarray:
    """Accept/reject handling of the stationarity constraint.

    ``A_update``/``A_current`` are (p, r, r) lag blocks; ``q_value`` maps lag
    blocks to the Q-function. A stable update passes through. Otherwise the
    update is shrunk to spectral radius 1 - epsilon and kept only when it
    beats ``A_current``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if spectral_radius(companion_matrix(A_update)) < 1.0:
        return np.asarray(A_update, dtype=float)
    shrunk = shrink_to_stable(A_update, epsilon)
    if q_value(shrunk) > q_value(A_current):
        return shrunk
    return np.asarray(A_current, dtype=float)


def apply_equality_constraints(mom: SufficientMoments, which, theta: ThetaParams,
                               spec: ModelSpec) -> dict:
    """Shared estimates for the parameters named in ``which``.

    Returns a dict of stacked arrays (regime-indexed copies of the common
    value). A is obtained with Q_k held fixed, then Q refreshed given A.
    """
    M, p = spec.M, spec.p
    out = {}
    which = set(which)
    if "A" in which:
        terms = [(np.linalg.inv(theta.Q[k]), mom.B1[k], mom.B2[k]) for k in range(M)]
        A = quadratic_solve(terms)
        out["A"] = np.stack([_blocks(A, p)] * M)
    if "Q" in which or "A" in which:
        A_w = [_wide(a) for a in out.get("A", theta.A)]
        resid = [quad_resid(mom.S11[k], A_w[k], mom.B1[k], mom.B2[k]) for k in range(M)]
        if "Q" in which:
            Q = sum(resid) / max(mom.w2.sum(), MIN_WEIGHT)
            out["Q"] = np.stack([sym(Q)] * M)
        else:
            out["Q"] = np.stack([sym(resid[k]) / mom.w2[k] if mom.w2[k] > MIN_WEIGHT
                                 else theta.Q[k] for k in range(M)])
    if "C" in which and spec.kind is not Kind.VAR:
        C = _solve_right(mom.Syx.sum(axis=0), mom.Sxx.sum(axis=0))
        out["C"] = np.stack([C] * M)
    if "mu" in which:
        W = mom.W1.sum()
        mu = mom.x1w.sum(axis=0) / W
        out["mu"] = np.stack([mu] * M)
    if "Sigma" in which:
        W = mom.W1.sum()
        mus = out.get("mu", theta.mu)
        S = sum(mom.P1w[k] - np.outer(mom.x1w[k], mus[k]) - np.outer(mus[k], mom.x1w[k])
                + mom.W1[k] * np.outer(mus[k], mus[k]) for k in range(M)) / W
        out["Sigma"] = np.stack([sym(S)] * M)
    return out


# ------------------------------------------------------------ closed-form update

def _q_update(mom, k, A_wide):
    return sym(quad_resid(mom.S11[k], A_wide, mom.B1[k], mom.B2[k])) / mom.w2[k]


def _R_update(mom, C):
    num = sum(quad_resid(mom.Syy[j], C[j], mom.Syx[j], mom.Sxx[j]) for j in range(mom.M))
    return sym(num) / mom.w_obs.sum()


def _pooled_C(mom):
    return _solve_right(mom.Syx.sum(axis=0), mom.Sxx.sum(axis=0))


def update_unconstrained(mom: SufficientMoments, spec: ModelSpec,
                         theta_old: ThetaParams | None = None) -> ThetaParams:
    """Joint maximizer of the Q-function without constraints.

    Shared structure of the model kind is kept (dyn pools C and R over
    regimes; obs pools R; var keeps C = I, R = 0). Processes or regimes with
    negligible posterior mass keep ``theta_old`` values when given.
    """
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    d = p * r
    A = np.empty((M, p, r, r))
    Q = np.empty((M, r, r))
    mu = np.empty((M, d))
    Sigma = np.empty((M, d, d))
    for k in range(M):
        if mom.w2[k] > MIN_WEIGHT:
            Aw = _solve_right(mom.B1[k], mom.B2[k])
            A[k] = _blocks(Aw, p)
            Q[k] = _q_update(mom, k, Aw)
        elif theta_old is not None:
            A[k], Q[k] = theta_old.A[k], theta_old.Q[k]
        else:
            A[k], Q[k] = 0.0, np.eye(r)
        if mom.W1[k] > MIN_WEIGHT:
            mu[k] = mom.x1w[k] / mom.W1[k]
            Sigma[k] = sym(mom.P1w[k] / mom.W1[k] - np.outer(mu[k], mu[k]))
        elif theta_old is not None:
            mu[k], Sigma[k] = theta_old.mu[k], theta_old.Sigma[k]
        else:
            mu[k], Sigma[k] = 0.0, np.eye(d)
    if spec.kind is Kind.VAR:
        C = np.stack([np.eye(N)] * M)
        R = np.zeros((M, N, N))
    else:
        if spec.kind is Kind.DYN:
            C = np.stack([_pooled_C(mom)] * M)
        else:
            C = np.empty((M, N, r))
            for j in range(M):
                if mom.w_obs[j] > MIN_WEIGHT:
                    C[j] = _solve_right(mom.Syx[j], mom.Sxx[j])
                elif theta_old is not None:
                    C[j] = theta_old.C[j]
                else:
                    C[j] = np.eye(N, r)
        R = np.stack([_R_update(mom, C)] * M)
    pi = mom.W1_regime / mom.W1_regime.sum()
    Z = _Z_update(mom, theta_old)
    return ThetaParams(A=A, C=C, Q=Q, R=R, mu=mu, Sigma=Sigma, pi=pi, Z=Z)


def _Z_update(mom, theta_old):
    M = mom.M
    rows = mom.Zcount.sum(axis=1)
    Z = np.full((M, M), 1.0 / M) if theta_old is None else np.array(theta_old.Z)
    ok = rows > MIN_WEIGHT
    Z[ok] = mom.Zcount[ok] / rows[ok, None]
    return Z


# --------------------------------------------------------- constrained M-step

def _floor_cov(S, floor_abs):
    return floor_eigenvalues(sym(S), floor_abs)


def _floor_relative(S, rel=COV_FLOOR):
    n = S.shape[0]
    return _floor_cov(S, rel * max(abs(np.trace(S)) / n, 1e-300))


def m_step(theta: ThetaParams, mom: SufficientMoments, spec: ModelSpec) -> ThetaParams:
    """Constrained M-step with per-group acceptance.

    Groups are updated in the order A, Q, C, R, (mu, Sigma), (pi, Z). Each
    group's candidate replaces the current values only when the Q-function
    does not decrease.
    """
    cons = spec.constraints
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    eq = cons.equal_across_regimes
    cur = theta
    parts = q_parts(cur, mom, spec)

    def consider(candidate, part):
        nonlocal cur, parts
        try:
            new = _q_part(part, candidate, mom, spec)
        except SingularMoment:
            return
        if np.isfinite(new) and new >= parts[part]:
            cur = candidate
            parts = {**parts, part: new}

    # A
    fixedA = cons.expanded_fixed_A(M, p, r)
    Qinv = [np.linalg.inv(cur.Q[k]) for k in range(M)]
    A_new = np.array(cur.A)
    if "A" in eq:
        mask = values = None
        if fixedA is not None:
            mask, values = _wide(fixedA[0][0]), _wide(fixedA[1][0])
        terms = [(Qinv[k], mom.B1[k], mom.B2[k]) for k in range(M)]
        A_new[:] = _blocks(quadratic_solve(terms, mask, values), p)
    else:
        for k in range(M):
            if mom.w2[k] <= MIN_WEIGHT:
                continue
            if fixedA is not None:
                Aw = quadratic_solve([(Qinv[k], mom.B1[k], mom.B2[k])],
                                     _wide(fixedA[0][k]), _wide(fixedA[1][k]))
            else:
                Aw = _solve_right(mom.B1[k], mom.B2[k])
            A_new[k] = _blocks(Aw, p)
    if cons.stable_A:
        for k in range(M):
            qk = lambda blocks, k=k: state_term(_wide(blocks), cur.Q[k], mom, k)
            A_new[k] = apply_eigen_constraint(A_new[k], cur.A[k], cons.epsilon, qk)
        if "A" in eq and not np.allclose(A_new, A_new[0]):
            A_new[:] = cur.A
    consider(cur.replace(A=A_new), "state")

    # Q
    resid = [quad_resid(mom.S11[k], _wide(cur.A[k]), mom.B1[k], mom.B2[k]) for k in range(M)]
    Q_new = np.array(cur.Q)
    if "Q" in eq:
        Q_new[:] = sym(sum(resid)) / max(mom.w2.sum(), MIN_WEIGHT)
    else:
        for k in range(M):
            if mom.w2[k] > MIN_WEIGHT:
                Q_new[k] = sym(resid[k]) / mom.w2[k]
    for k in range(M):
        if cons.diag_Q:
            Q_new[k] = np.diag(np.diag(Q_new[k]))
        Q_new[k] = _floor_relative(Q_new[k])
    consider(cur.replace(Q=Q_new), "state")

    if spec.kind is not Kind.VAR:
        Rinv = np.linalg.inv(cur.R[0])
        # C
        fixedC = cons.expanded_fixed_C(M, N, r)
        C_new = np.array(cur.C)
        pooled = spec.kind is Kind.DYN or "C" in eq
        if pooled:
            B1, B2 = mom.Syx.sum(axis=0), mom.Sxx.sum(axis=0)
            if fixedC is not None:
                C = quadratic_solve([(Rinv, B1, B2)], fixedC[0][0], fixedC[1][0])
            else:
                C = _solve_right(B1, B2)
            if cons.scale_C is not None:
                C = apply_scaling_constraint(C, cons.scale_C, Rinv, B1, B2)
            C_new[:] = C
        else:
            for j in range(M):
                if mom.w_obs[j] <= MIN_WEIGHT:
                    continue
                if fixedC is not None:
                    C = quadratic_solve([(Rinv, mom.Syx[j], mom.Sxx[j])], fixedC[0][j], fixedC[1][j])
                else:
                    C = _solve_right(mom.Syx[j], mom.Sxx[j])
                if cons.scale_C is not None:
                    C = apply_scaling_constraint(C, cons.scale_C, Rinv, mom.Syx[j], mom.Sxx[j])
                C_new[j] = C
        consider(cur.replace(C=C_new), "obs")
        # R
        R = _R_update(mom, cur.C)
        if cons.diag_R:
            R = np.diag(np.diag(R))
        R = _floor_relative(R)
        consider(cur.replace(R=np.stack([R] * M)), "obs")

    # mu, Sigma
    mu_new, Sigma_new = np.array(cur.mu), np.array(cur.Sigma)
    shared = apply_equality_constraints(mom, eq & {"mu", "Sigma"}, cur, spec)
    for k in range(M):
        if mom.W1[k] > MIN_WEIGHT:
            mu_new[k] = mom.x1w[k] / mom.W1[k]
    if "mu" in shared:
        mu_new = shared["mu"]
    for k in range(M):
        if mom.W1[k] > MIN_WEIGHT:
            m = mu_new[k]
            S = (mom.P1w[k] - np.outer(mom.x1w[k], m) - np.outer(m, mom.x1w[k])
                 + mom.W1[k] * np.outer(m, m)) / mom.W1[k]
            Sigma_new[k] = sym(S)
    if "Sigma" in eq:
        Wtot = mom.W1.sum()
        S = sum(mom.W1[k] * Sigma_new[k] for k in range(M)) / Wtot
        Sigma_new[:] = sym(S)
    for k in range(M):
        if cons.diag_Sigma:
            Sigma_new[k] = np.diag(np.diag(Sigma_new[k]))
        level = SIGMA_FLOOR * max(np.trace(cur.Q[k]) / r, 1e-300)
        Sigma_new[k] = _floor_cov(Sigma_new[k], level)
    consider(cur.replace(mu=mu_new, Sigma=Sigma_new), "init")

    # pi, Z
    pi = mom.W1_regime / mom.W1_regime.sum()
    consider(cur.replace(pi=pi, Z=_Z_update(mom, cur)), "regime")
    return cur


__all__ = ["SufficientMoments", "compute_moments", "temper", "q_function", "update_unconstrained",
           "apply_fixed_constraints", "apply_scaling_constraint", "apply_eigen_constraint",
           "apply_equality_constraints", "quadratic_solve", "m_step", "gaussian_term"]

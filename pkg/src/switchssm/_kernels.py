"""Compiled inner loops for Kim filtering/smoothing and fixed-regime Kalman passes.

All kernels work on the joint order-1 representation: per regime j a (D, D)
transition A[j], (D, D) innovation covariance Q[j], (N, D) observation matrix
C[j], (N, N) noise covariance R[j], and initial moments mu[j], Sig[j].
Kernels return a status code: -1 on success, otherwise the failing time index.

Matrices here are tiny, so plain loops beat BLAS calls. When N > D and R is
positive definite the measurement update uses the Woodbury form, which needs
only D x D algebra per regime pair:

    C' F^-1 C = (I + G V)^-1 G,  log|F| = log|R| + log|I + G V|,
    with G = C' R^-1 C and F = C V C' + R.
"""

import numpy as np
from numba import njit

LOG2PI = np.log(2.0 * np.pi)
PROB_FLOOR = 1e-300
LOG_FLOOR = np.log(PROB_FLOOR)


# ---------------------------------------------------------------- small algebra

@njit(cache=True)
def _mm(A, B):
    n, k = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for l in range(k):
            a = A[i, l]
            if a != 0.0:
                for j in range(m):
                    out[i, j] += a * B[l, j]
    return out


@njit(cache=True)
def _mmt(A, B):
    """A @ B.T"""
    n, k = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[i, l] * B[j, l]
            out[i, j] = s
    return out


@njit(cache=True)
def _mv(A, x):
    n, k = A.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for l in range(k):
            s += A[i, l] * x[l]
        out[i] = s
    return out


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def _predict_cov(A, V, Q):
    """A V A' + Q, symmetrized."""
    out = _mmt(_mm(A, V), A)
    n = out.shape[0]
    for a in range(n):
        for b in range(a, n):
            v = 0.5 * (out[a, b] + out[b, a]) + 0.5 * (Q[a, b] + Q[b, a])
            out[a, b] = v
            out[b, a] = v
    return out


@njit(cache=True)
def _sym_inplace(V):
    n = V.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            v = 0.5 * (V[i, j] + V[j, i])
            V[i, j] = v
            V[j, i] = v


@njit(cache=True)
def _cholesky(A, L):
    n = A.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _chol_solve(L, B):
    n, k = B.shape
    X = B.copy()
    for c in range(k):
        for i in range(n):
            s = X[i, c]
            for m in range(i):
                s -= L[i, m] * X[m, c]
            X[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = X[i, c]
            for m in range(i + 1, n):
                s -= L[m, i] * X[m, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def _lu_solve(A, B):
    """Solve A X = B by partial pivoting; returns (X, log|det A|, ok)."""
    n = A.shape[0]
    m = B.shape[1]
    U = A.copy()
    X = B.copy()
    logdet = 0.0
    for c in range(n):
        piv = c
        big = abs(U[c, c])
        for i in range(c + 1, n):
            if abs(U[i, c]) > big:
                big = abs(U[i, c])
                piv = i
        if not big > 0.0:
            return X, 0.0, False
        if piv != c:
            for j in range(n):
                tmp = U[c, j]
                U[c, j] = U[piv, j]
                U[piv, j] = tmp
            for j in range(m):
                tmp = X[c, j]
                X[c, j] = X[piv, j]
                X[piv, j] = tmp
        d = U[c, c]
        logdet += np.log(abs(d))
        for i in range(c + 1, n):
            f = U[i, c] / d
            if f != 0.0:
                for j in range(c, n):
                    U[i, j] -= f * U[c, j]
                for j in range(m):
                    X[i, j] -= f * X[c, j]
    for j in range(m):
        for i in range(n - 1, -1, -1):
            s = X[i, j]
            for k in range(i + 1, n):
                s -= U[i, k] * X[k, j]
            X[i, j] = s / U[i, i]
    return X, logdet, True


@njit(cache=True)
def _pinv_psd(V):
    """Inverse of a symmetric PSD matrix; pseudo-inverse when (near) singular."""
    n = V.shape[0]
    top = 0.0
    for i in range(n):
        if V[i, i] > top:
            top = V[i, i]
    if top <= 0.0:
        return np.zeros_like(V)
    L = np.empty((n, n))
    if _cholesky(V, L):
        good = True
        for i in range(n):
            if L[i, i] * L[i, i] < 1e-10 * top:
                good = False
                break
        if good:
            return _chol_solve(L, np.eye(n))
    w, U = np.linalg.eigh(V)
    wmax = w.max()
    G = np.zeros_like(V)
    for i in range(n):
        if w[i] > 1e-12 * wmax:
            for a in range(n):
                ua = U[a, i] / w[i]
                for b in range(n):
                    G[a, b] += ua * U[b, i]
    return G


@njit(cache=True)
def _logsumexp(v):
    m = -np.inf
    for x in v:
        if x > m:
            m = x
    if m == -np.inf:
        return m
    s = 0.0
    for x in v:
        s += np.exp(x - m)
    return m + np.log(s)


@njit(cache=True)
def _safe_log(x):
    if x > PROB_FLOOR:
        return np.log(x)
    return LOG_FLOOR


@njit(cache=True)
def _collapse(w, xs, Vs, xout, Vout):
    """Moment-match the mixture sum_i w_i N(xs[i], Vs[i]) into (xout, Vout)."""
    M = w.shape[0]
    D = xout.shape[0]
    for a in range(D):
        s = 0.0
        for i in range(M):
            s += w[i] * xs[i, a]
        xout[a] = s
    for a in range(D):
        for b in range(a, D):
            s = 0.0
            for i in range(M):
                s += w[i] * (Vs[i, a, b] + (xs[i, a] - xout[a]) * (xs[i, b] - xout[b]))
            Vout[a, b] = s
            Vout[b, a] = s


# ---------------------------------------------------------- measurement updates

@njit(cache=True)
def _update_direct(y, xp, Vp, C, R, reg, xo, Vo):
    """Kalman measurement update in observation space; returns (loglik, ok)."""
    N = y.shape[0]
    D = xp.shape[0]
    CV = _mm(C, Vp)
    F = _mmt(CV, C)
    tr = 0.0
    for i in range(N):
        for j in range(N):
            F[i, j] += R[i, j]
        tr += F[i, i]
    _sym_inplace(F)
    jit = reg * (1.0 + abs(tr) / N)
    for i in range(N):
        F[i, i] += jit
    L = np.empty((N, N))
    if not _cholesky(F, L):
        return -np.inf, False
    e = y - _mv(C, xp)
    rhs = np.empty((N, D + 1))
    rhs[:, :D] = CV
    rhs[:, D] = e
    sol = _chol_solve(L, rhs)
    for a in range(D):
        s = 0.0
        for i in range(N):
            s += CV[i, a] * sol[i, D]
        xo[a] = xp[a] + s
        for b in range(a, D):
            s = 0.0
            for i in range(N):
                s += CV[i, a] * sol[i, b]
            v = Vp[a, b] - s
            Vo[a, b] = v
            Vo[b, a] = v
    logdet = 0.0
    for i in range(N):
        logdet += 2.0 * np.log(L[i, i])
    quad = 0.0
    for i in range(N):
        quad += e[i] * sol[i, D]
    return -0.5 * (N * LOG2PI + logdet + quad), True


@njit(cache=True)
def _update_woodbury(N, xp, Vp, G, cry, yry, logdetR, xo, Vo):
    """Same update via D x D algebra. cry = C' R^-1 y, yry = y' R^-1 y."""
    D = xp.shape[0]
    Mx = _mm(G, Vp)
    for i in range(D):
        Mx[i, i] += 1.0
    Gx = _mv(G, xp)
    rhs = np.empty((D, D + 1))
    rhs[:, :D] = G
    for i in range(D):
        rhs[i, D] = cry[i] - Gx[i]
    sol, logdetM, ok = _lu_solve(Mx, rhs)
    if not ok:
        return -np.inf, False
    g = sol[:, D].copy()
    H = np.ascontiguousarray(sol[:, :D])
    Vg = _mv(Vp, g)
    for a in range(D):
        xo[a] = xp[a] + Vg[a]
    VHV = _mm(_mm(Vp, H), Vp)
    for a in range(D):
        for b in range(a, D):
            v = Vp[a, b] - 0.5 * (VHV[a, b] + VHV[b, a])
            Vo[a, b] = v
            Vo[b, a] = v
    u = rhs[:, D]
    quad = yry - 2.0 * _dot(xp, cry) + _dot(xp, Gx) - _dot(u, Vg)
    return -0.5 * (N * LOG2PI + logdetR + logdetM + quad), True


@njit(cache=True)
def _update(t, j, y, xp, Vp, C, R, reg, woodbury, G, CRy, yRy, logdetR, xo, Vo):
    if woodbury:
        return _update_woodbury(y.shape[1], xp, Vp, G[j], CRy[t, j], yRy[t, j], logdetR[j],
                                xo, Vo)
    return _update_direct(y[t], xp, Vp, C[j], R[j], reg, xo, Vo)


# ------------------------------------------------------------------ Kim filter

@njit(cache=True)
def kim_filter_kernel(y, A, Q, C, R, mu, Sig, pi, Z, reg, woodbury, G, CRy, yRy, logdetR):
    T, N = y.shape
    M, D = mu.shape
    Wp = np.zeros((T, M))
    Wf = np.zeros((T, M))
    xp = np.zeros((T, M, D))
    Vp = np.zeros((T, M, D, D))
    xf = np.zeros((T, M, D))
    Vf = np.zeros((T, M, D, D))
    ll = np.zeros(T)
    xo = np.empty(D)
    Vo = np.empty((D, D))

    logw = np.empty(M)
    for j in range(M):
        xp[0, j] = mu[j]
        Vp[0, j] = Sig[j]
        Wp[0, j] = pi[j]
        l, ok = _update(0, j, y, mu[j], Sig[j], C, R, reg, woodbury, G, CRy, yRy, logdetR,
                        xo, Vo)
        if not ok or not np.isfinite(l):
            return Wp, Wf, xp, Vp, xf, Vf, ll, 0
        xf[0, j] = xo
        Vf[0, j] = Vo
        logw[j] = _safe_log(pi[j]) + l
    ll[0] = _logsumexp(logw)
    for j in range(M):
        Wf[0, j] = np.exp(logw[j] - ll[0])

    xpair = np.empty((M, M, D))
    Vpair = np.empty((M, M, D, D))
    xpp = np.empty((M, M, D))
    Vpp = np.empty((M, M, D, D))
    logw2 = np.empty((M, M))
    logprior = np.empty((M, M))
    col = np.empty(M)
    for t in range(1, T):
        for i in range(M):
            for j in range(M):
                xpred = _mv(A[j], xf[t - 1, i])
                Vpred = _predict_cov(A[j], Vf[t - 1, i], Q[j])
                xpp[i, j] = xpred
                Vpp[i, j] = Vpred
                l, ok = _update(t, j, y, xpred, Vpred, C, R, reg, woodbury, G, CRy, yRy,
                                logdetR, xo, Vo)
                if not ok or not np.isfinite(l):
                    return Wp, Wf, xp, Vp, xf, Vf, ll, t
                xpair[i, j] = xo
                Vpair[i, j] = Vo
                logprior[i, j] = _safe_log(Wf[t - 1, i] * Z[i, j])
                logw2[i, j] = logprior[i, j] + l
        ll[t] = _logsumexp(logw2.ravel())
        tot = 0.0
        for j in range(M):
            lj = _logsumexp(logw2[:, j])
            Wf[t, j] = max(np.exp(lj - ll[t]), PROB_FLOOR)
            tot += Wf[t, j]
            # collapse filtered pair posteriors onto regime j
            for i in range(M):
                col[i] = np.exp(logw2[i, j] - lj)
            _collapse(col, xpair[:, j], Vpair[:, j], xf[t, j], Vf[t, j])
            # collapsed one-step predictions
            lp = _logsumexp(logprior[:, j])
            s = 0.0
            for i in range(M):
                s += Wf[t - 1, i] * Z[i, j]
                col[i] = np.exp(logprior[i, j] - lp)
            Wp[t, j] = s
            _collapse(col, xpp[:, j], Vpp[:, j], xp[t, j], Vp[t, j])
        for j in range(M):
            Wf[t, j] /= tot
    return Wp, Wf, xp, Vp, xf, Vf, ll, -1


# ---------------------------------------------------------------- Kim smoother

@njit(cache=True)
def kim_smoother_kernel(Wf, xf, Vf, A, Q, Z):
    T, M, D = xf.shape
    Ws = np.zeros((T, M))
    xs = np.zeros((T, M, D))
    Vs = np.zeros((T, M, D, D))
    Wpair = np.zeros((T, M, M))
    Plag = np.zeros((T, M, D, D))
    Pcross = np.zeros((T, M, D, D))
    Ws[T - 1] = Wf[T - 1]
    xs[T - 1] = xf[T - 1]
    Vs[T - 1] = Vf[T - 1]

    xjk = np.empty((M, M, D))
    Vjk = np.empty((M, M, D, D))
    Cjk = np.empty((M, M, D, D))
    U = np.empty((M, M))
    Wpred = np.empty(M)
    w = np.empty(M)
    for t in range(T - 2, -1, -1):
        for k in range(M):
            s = 0.0
            for j in range(M):
                s += Wf[t, j] * Z[j, k]
            Wpred[k] = max(s, PROB_FLOOR)
        for j in range(M):
            for k in range(M):
                xpred = _mv(A[k], xf[t, j])
                Vpred = _predict_cov(A[k], Vf[t, j], Q[k])
                J = _mm(_mmt(Vf[t, j], A[k]), _pinv_psd(Vpred))
                x = xf[t, j] + _mv(J, xs[t + 1, k] - xpred)
                V = Vf[t, j] + _mmt(_mm(J, Vs[t + 1, k] - Vpred), J)
                _sym_inplace(V)
                xjk[j, k] = x
                Vjk[j, k] = V
                Cjk[j, k] = _mmt(Vs[t + 1, k], J)
                U[j, k] = Ws[t + 1, k] * Wf[t, j] * Z[j, k] / Wpred[k]
        tot = U.sum()
        if tot > 0.0:
            for j in range(M):
                for k in range(M):
                    U[j, k] /= tot
        Wpair[t + 1] = U
        for j in range(M):
            wj = 0.0
            for k in range(M):
                wj += U[j, k]
            Ws[t, j] = wj
            for k in range(M):
                w[k] = U[j, k] / wj if wj > PROB_FLOOR else 1.0 / M
            _collapse(w, xjk[j], Vjk[j], xs[t, j], Vs[t, j])
        # moments of (x_t, x_{t+1}) given S_{t+1} = k
        for k in range(M):
            for j in range(M):
                w[j] = Wf[t, j] * Z[j, k] / Wpred[k]
            for a in range(D):
                for b in range(D):
                    sl = 0.0
                    sc = 0.0
                    for j in range(M):
                        sl += w[j] * (Vjk[j, k, a, b] + xjk[j, k, a] * xjk[j, k, b])
                        sc += w[j] * (Cjk[j, k, a, b] + xs[t + 1, k, a] * xjk[j, k, b])
                    Plag[t + 1, k, a, b] = sl
                    Pcross[t + 1, k, a, b] = sc
            _sym_inplace(Plag[t + 1, k])
    return Ws, xs, Vs, Wpair, Plag, Pcross


# ------------------------------------------------------- fixed-regime Kalman

@njit(cache=True)
def kalman_fixed_kernel(y, S, A, Q, C, R, mu, Sig, reg, woodbury, G, CRy, yRy, logdetR):
    """Kalman filter + RTS smoother with regime-indexed matrices chosen by S."""
    T, N = y.shape
    M, D = mu.shape
    xp = np.zeros((T, D))
    Vp = np.zeros((T, D, D))
    xf = np.zeros((T, D))
    Vf = np.zeros((T, D, D))
    ll = np.zeros(T)
    xo = np.empty(D)
    Vo = np.empty((D, D))
    xs = np.zeros((T, D))
    Vs = np.zeros((T, D, D))
    Plag = np.zeros((T, D, D))
    Pcross = np.zeros((T, D, D))
    for t in range(T):
        j = S[t]
        if t == 0:
            xp[0] = mu[j]
            Vp[0] = Sig[j]
        else:
            xp[t] = _mv(A[j], xf[t - 1])
            Vp[t] = _predict_cov(A[j], Vf[t - 1], Q[j])
        l, ok = _update(t, j, y, xp[t], Vp[t], C, R, reg, woodbury, G, CRy, yRy, logdetR, xo, Vo)
        if not ok or not np.isfinite(l):
            return xf, Vf, ll, xs, Vs, Plag, Pcross, t
        ll[t] = l
        xf[t] = xo
        Vf[t] = Vo
    xs[T - 1] = xf[T - 1]
    Vs[T - 1] = Vf[T - 1]
    for t in range(T - 2, -1, -1):
        k = S[t + 1]
        J = _mm(_mmt(Vf[t], A[k]), _pinv_psd(Vp[t + 1]))
        xs[t] = xf[t] + _mv(J, xs[t + 1] - xp[t + 1])
        V = Vf[t] + _mmt(_mm(J, Vs[t + 1] - Vp[t + 1]), J)
        _sym_inplace(V)
        Vs[t] = V
        Plag[t + 1] = Vs[t] + np.outer(xs[t], xs[t])
        Pcross[t + 1] = _mmt(Vs[t + 1], J) + np.outer(xs[t + 1], xs[t])
    return xf, Vf, ll, xs, Vs, Plag, Pcross, -1

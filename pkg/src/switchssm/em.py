"""EM fitting: plain, annealed and accelerated drivers, plus selection scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import Kind, ModelSpec, NumericalFailure, ThetaParams, validate_labels
from .kim import SmoothedStats, decode_regimes, kalman_fixed_regime, kim_smoother
from .mstep import compute_moments, m_step


@dataclass(frozen=True)
class FitOptions:
    """Stopping rules and driver settings.

    The loop stops after ``max_iter`` E-steps or once ``patience`` consecutive
    iterations each raise the log-likelihood by less than ``tol_rel`` times its
    magnitude. ``daem`` is an optional nondecreasing schedule of tempering
    exponents ending at 1. The ``outer_*``/``inner_*`` budgets drive
    :func:`accelerated_fit`.
    """

    max_iter: int = 500
    tol_rel: float = 1e-6
    patience: int = 5
    daem: Optional[tuple] = None
    accelerate: bool = False
    outer_iter: int = 30
    outer_tol: float = 1e-5
    inner_iter: int = 500
    inner_tol: float = 1e-6
    max_cycles: int = 20
    seed: Optional[int] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.patience < 1:
            raise ValueError("patience must be positive")
        if self.daem is not None:
            sched = tuple(float(b) for b in self.daem)
            if not sched or any(not 0 < b <= 1 for b in sched):
                raise ValueError("annealing exponents must lie in (0, 1]")
            if any(b2 < b1 for b1, b2 in zip(sched, sched[1:])) or sched[-1] != 1.0:
                raise ValueError("annealing schedule must be nondecreasing and end at 1")
            object.__setattr__(self, "daem", sched)
        for name in ("outer_iter", "inner_iter", "max_cycles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("outer_tol", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw) -> "FitOptions":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class FitResult:
    theta: ThetaParams
    stats: SmoothedStats
    loglik_trace: np.ndarray
    S_hat: np.ndarray
    n_passes: int
    n_iter: int
    converged: bool
    scores: dict = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return float(self.stats.loglik)


class _Tracker:
    def __init__(self):
        self.theta = None
        self.stats = None
        self.L = -np.inf

    def offer(self, theta, stats):
        if stats.loglik > self.L or self.theta is None:
            self.theta, self.stats, self.L = theta, stats, stats.loglik


def _em_loop(y, spec, theta, max_iter, tol_rel, patience, beta, tracker, trace):
    """Shared EM iterations; returns (theta, n_passes, n_iter, converged)."""
    prev = None
    stall = 0
    passes = 0
    for it in range(max_iter):
        try:
            stats = kim_smoother(y, theta, spec, check=False)
        except NumericalFailure as exc:
            raise NumericalFailure(str(exc), t=exc.t, iteration=it, best=tracker.theta) from exc
        passes += 1
        L = stats.loglik
        if not np.isfinite(L):
            raise NumericalFailure("non-finite log-likelihood", iteration=it, best=tracker.theta)
        trace.append(L)
        tracker.offer(theta, stats)
        if prev is not None:
            stall = stall + 1 if L - prev < tol_rel * abs(prev) else 0
            if stall >= patience:
                return theta, passes, it + 1, True
        prev = L
        if it == max_iter - 1:
            break
        theta = m_step(theta, compute_moments(y, stats, spec, beta), spec)
    return theta, passes, max_iter, False


def _result(y, spec, tracker, trace, passes, n_iter, converged) -> FitResult:
    res = FitResult(theta=tracker.theta, stats=tracker.stats, loglik_trace=np.array(trace),
                    S_hat=decode_regimes(tracker.stats), n_passes=passes, n_iter=n_iter,
                    converged=converged)
    return replace(res, scores=selection_scores(res, spec, y))


def _as_y(y, spec):
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if y.ndim != 2 or y.shape[1] != spec.N:
        raise ValueError(f"y must have shape (T, {spec.N})")
    return y


def em_fit(y, spec: ModelSpec, theta0: ThetaParams, opts: Optional[FitOptions] = None) -> FitResult:
    """Switching EM from ``theta0``; returns the iterate with the highest likelihood."""
    opts = opts or FitOptions()
    y = _as_y(y, spec)
    if opts.daem is not None and opts.daem != (1.0,):
        return daem_fit(y, spec, theta0, opts)
    tracker, trace = _Tracker(), []
    _, passes, n_iter, conv = _em_loop(y, spec, theta0, opts.max_iter, opts.tol_rel,
                                       opts.patience, 1.0, tracker, trace)
    return _result(y, spec, tracker, trace, passes, n_iter, conv)


def daem_fit(y, spec: ModelSpec, theta0: ThetaParams, opts: FitOptions) -> FitResult:
    """Deterministic annealing: one EM stage per exponent in ``opts.daem``.

    Within a stage the smoothed regime probabilities (marginal and pairwise)
    are raised to the power beta and renormalized before the M-step. The
    reported likelihood is always the untempered one.
    """
    y = _as_y(y, spec)
    schedule = opts.daem or (1.0,)
    tracker, trace = _Tracker(), []
    theta = theta0
    passes = n_iter = 0
    conv = False
    for beta in schedule:
        theta, p_, n_, conv = _em_loop(y, spec, theta, opts.max_iter, opts.tol_rel,
                                       opts.patience, beta, tracker, trace)
        passes += p_
        n_iter += n_
    return _result(y, spec, tracker, trace, passes, n_iter, conv)


def fixed_regime_em(y, spec: ModelSpec, S, theta0: ThetaParams, opts: Optional[FitOptions] = None,
                    return_trace: bool = False):
    """Exact EM for the model with the regime path pinned to ``S``.

    The traced quantity is log p(y, S), which exact EM never decreases. Stops
    after ``opts.max_iter`` iterations or when ``opts.patience`` consecutive
    relative improvements fall below ``opts.tol_rel``.
    """
    opts = opts or FitOptions()
    y = _as_y(y, spec)
    S = validate_labels(S, spec.M)
    theta = theta0
    trace = []
    best_theta, best_L = theta0, -np.inf
    prev, stall = None, 0
    for it in range(opts.max_iter):
        try:
            stats = kalman_fixed_regime(y, theta, spec, S, check=False)
        except NumericalFailure as exc:
            raise NumericalFailure(str(exc), t=exc.t, iteration=it, best=best_theta) from exc
        L = stats.loglik
        trace.append(L)
        if L > best_L:
            best_theta, best_L = theta, L
        if prev is not None:
            stall = stall + 1 if L - prev < opts.tol_rel * abs(prev) else 0
            if stall >= opts.patience:
                break
        prev = L
        if it == opts.max_iter - 1:
            break
        theta = m_step(theta, compute_moments(y, stats, spec), spec)
    if return_trace:
        return best_theta, np.array(trace)
    return best_theta


def accelerated_fit(y, spec: ModelSpec, theta0: ThetaParams,
                    opts: Optional[FitOptions] = None) -> FitResult:
    """Alternate short switching-EM phases with long fixed-regime EM phases.

    Phase (a) runs ``outer_iter`` switching iterations (tolerance
    ``outer_tol``, patience 1); phase (b) runs fixed-regime EM at the decoded
    path. The switching-phase (pi, Z) are carried into the next phase since
    hard-path transition estimates can contain exact zeros. Stops when an (a)
    phase improves the best likelihood by less than ``tol_rel`` (relative) or
    after ``max_cycles`` cycles.
    """
    opts = opts or FitOptions(accelerate=True)
    y = _as_y(y, spec)
    tracker, trace = _Tracker(), []
    theta = theta0
    passes = n_iter = 0
    prev = None
    conv = False
    inner = opts.with_(max_iter=opts.inner_iter, tol_rel=opts.inner_tol)
    for cycle in range(opts.max_cycles):
        theta_a, p_, n_, _ = _em_loop(y, spec, theta, opts.outer_iter, opts.outer_tol, 1, 1.0,
                                      tracker, trace)
        passes += p_
        n_iter += n_
        if prev is not None and tracker.L - prev < opts.tol_rel * abs(prev):
            conv = True
            break
        prev = tracker.L
        if cycle == opts.max_cycles - 1:
            break
        S_hat = decode_regimes(tracker.stats)
        try:
            theta_b = fixed_regime_em(y, spec, S_hat, tracker.theta, inner)
        except NumericalFailure:
            theta_b = theta_a
        theta = theta_b.replace(pi=tracker.theta.pi, Z=tracker.theta.Z)
    return _result(y, spec, tracker, trace, passes, n_iter, conv)


def fit(y, spec: ModelSpec, theta0: ThetaParams, opts: Optional[FitOptions] = None) -> FitResult:
    """Dispatch on ``opts``: accelerated, annealed or plain EM."""
    opts = opts or FitOptions()
    if opts.accelerate:
        return accelerated_fit(y, spec, theta0, opts)
    if opts.daem is not None:
        return daem_fit(y, spec, theta0, opts)
    return em_fit(y, spec, theta0, opts)


# ------------------------------------------------------------ model selection

def n_free_params(spec: ModelSpec) -> int:
    """Free-parameter count honoring pinned, shared and diagonal constraints.

    Counted: lag coefficients, state noise covariances, observation matrices
    and noise (not for var), initial means and covariances, the initial
    probabilities (M - 1) and transition rows (M(M - 1)). Pinned coefficients
    are removed; parameters shared across regimes count once; diagonal
    covariances count their diagonal only; column-norm constraints remove one
    degree of freedom per column.
    """
    M, p, r, N = spec.M, spec.p, spec.r, spec.N
    d = p * r
    cons = spec.constraints
    eq = cons.equal_across_regimes
    tri = lambda n: n * (n + 1) // 2

    fa = cons.expanded_fixed_A(M, p, r)
    if "A" in eq:
        nA = p * r * r - (int(fa[0][0].sum()) if fa is not None else 0)
    else:
        nA = M * p * r * r - (int(fa[0].sum()) if fa is not None else 0)
    nQ = (r if cons.diag_Q else tri(r)) * (1 if "Q" in eq else M)
    nmu = d * (1 if "mu" in eq else M)
    nS = (d if cons.diag_Sigma else tri(d)) * (1 if "Sigma" in eq else M)
    total = nA + nQ + nmu + nS + (M - 1) + M * (M - 1)
    if spec.kind is not Kind.VAR:
        fc = cons.expanded_fixed_C(M, N, r)
        shared_C = spec.kind is Kind.DYN or "C" in eq
        if shared_C:
            nC = N * r - (int(fc[0][0].sum()) if fc is not None else 0)
            if cons.scale_C is not None:
                nC -= r
        else:
            nC = M * N * r - (int(fc[0].sum()) if fc is not None else 0)
            if cons.scale_C is not None:
                nC -= M * r
        nR = N if cons.diag_R else tri(N)
        total += max(nC, 0) + nR
    return int(total)


def one_step_predictions(y, theta: ThetaParams, spec: ModelSpec, stats: SmoothedStats) -> np.ndarray:
    """Kind-specific one-step-ahead predictions y_{t|t-1}, shape (T, N).

    Rows before the model order carry NaN.
    """
    y = np.asarray(y, dtype=float)
    T, N = y.shape
    p, r, d, M = spec.p, spec.r, spec.d, spec.M
    out = np.full((T, N), np.nan)
    S_hat = decode_regimes(stats)
    if spec.kind is Kind.VAR:
        for t in range(p, T):
            lags = np.concatenate([y[t - l - 1] for l in range(p)])
            w = theta.Z[S_hat[t - 1]]
            out[t] = sum(w[j] * (np.concatenate(list(theta.A[j]), axis=1) @ lags) for j in range(M))
        return out
    filt = stats.filter
    if filt is None:
        raise ValueError("one-step predictions need filter statistics")
    x_pred = np.einsum("tj,tja->ta", filt.W_pred, filt.x_pred)
    if spec.kind is Kind.DYN:
        out[p:] = x_pred[p:, :r] @ theta.C[0].T
        return out
    for t in range(p, T):
        w = theta.Z[S_hat[t - 1]]
        out[t] = sum(w[j] * theta.C[j] @ x_pred[t, j * d:j * d + r] for j in range(M))
    return out


def mape(y, theta, spec, stats, denominator: str = "r") -> float:
    """Mean absolute one-step prediction error, divided by (T - p) * r or (T - p) * N."""
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    pred = one_step_predictions(y, theta, spec, stats)
    if denominator not in ("r", "N"):
        raise ValueError("denominator must be 'r' or 'N'")
    dim = spec.r if denominator == "r" else spec.N
    if T <= spec.p:
        return float("nan")
    return float(np.abs(y[spec.p:] - pred[spec.p:]).sum() / ((T - spec.p) * dim))


def information_criteria(loglik: float, n_free: int, T: int) -> dict:
    return {"aic": -2.0 * loglik + 2.0 * n_free, "bic": -2.0 * loglik + math.log(T) * n_free}


def selection_scores(fit: FitResult, spec: ModelSpec, y, mape_denominator: str = "r") -> dict:
    y = np.asarray(y, dtype=float)
    k = n_free_params(spec)
    out = {"loglik": fit.loglik, "n_free": k}
    out.update(information_criteria(fit.loglik, k, y.shape[0]))
    out["mape"] = mape(y, fit.theta, spec, fit.stats, mape_denominator)
    return out


__all__ = ["FitOptions", "FitResult", "em_fit", "daem_fit", "accelerated_fit", "fixed_regime_em",
           "fit", "n_free_params", "selection_scores", "information_criteria", "mape",
           "one_step_predictions"]

"""Parametric bootstrap of fitted switching models and bootstrap confidence intervals."""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sstats

from .core import (Kind, ModelSpec, NumericalFailure, RankDeficient, ThetaParams, permute_regimes,
                   validate)
from .em import FitOptions, fit as run_fit
from .initialize import initialize
from .metrics import align_basis, projection
from .simulate import simulate_model
from .stationary import StationaryMeasures, stationary_measures

MAX_FAILURE_FRACTION = 0.2
TARGETS = ("cov", "corr", "acf", "pcorr", "Z", "A", "Q", "R", "CCt")
METHODS = ("percentile", "basic", "normal")


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BootstrapEnsemble:
    replicates: tuple
    logliks: np.ndarray
    seed: Optional[int] = None
    n_failed: int = 0

    @property
    def B(self) -> int:
        return len(self.replicates)

    def measures(self, spec: ModelSpec, max_lag: int = 5) -> list[StationaryMeasures]:
        return [stationary_measures(th, spec, max_lag) for th in self.replicates]


@dataclass(frozen=True, eq=False)
class ConfidenceBands:
    names: tuple
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: str
    level: float

    def covers(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (self.lower <= v) & (v <= self.upper)


# ------------------------------------------------------------------ replicates

_RETRYABLE = (NumericalFailure, RankDeficient, np.linalg.LinAlgError)


def _fit_replicate(theta_hat, spec, T, fit_opts, kappa, ss):
    rng = np.random.default_rng(ss)
    sim = simulate_model(theta_hat, spec, T, rng)
    init_seed = int(rng.integers(2**31 - 1))
    theta0 = initialize(sim.y, spec, kappa, seed=init_seed)
    res = run_fit(sim.y, spec, theta0, fit_opts)
    return res.theta, res.loglik


def _replicate_job(args):
    theta_hat, spec, T, fit_opts, kappa, seed, b = args
    for attempt in range(2):
        ss = np.random.SeedSequence([seed, b, attempt])
        try:
            theta, ll = _fit_replicate(theta_hat, spec, T, fit_opts, kappa, ss)
            if not validate(theta, spec):
                return b, theta, ll, attempt
        except _RETRYABLE:
            continue
    return b, None, None, 2


def parametric_bootstrap(theta_hat: ThetaParams, spec: ModelSpec, T: int, B: int,
                         fit_opts: Optional[FitOptions] = None, seed: int = 0,
                         jobs: int = 1, kappa: Optional[int] = None,
                         match: Optional[str] = "pi") -> BootstrapEnsemble:
    """Simulate B datasets under ``theta_hat`` and refit each from scratch.

    Replicate b uses the seed sequence (seed, b, attempt). A failed refit is
    retried once with the next attempt index and dropped with a warning if it
    fails again. More than 20% dropped replicates is an error. Replicates are
    regime-matched to ``theta_hat`` unless ``match`` is None.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    problems = validate(theta_hat, spec)
    if problems:
        raise ValueError("invalid parameters: " + "; ".join(problems))
    fit_opts = fit_opts or FitOptions(accelerate=True)
    args = [(theta_hat, spec, T, fit_opts, kappa, seed, b) for b in range(B)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_replicate_job, args))
    else:
        results = [_replicate_job(a) for a in args]
    results.sort(key=lambda r: r[0])
    kept = [(th, ll) for _, th, ll, _ in results if th is not None]
    failed = B - len(kept)
    if failed:
        warnings.warn(f"{failed} of {B} bootstrap replicates failed and were dropped",
                      RuntimeWarning, stacklevel=2)
    if failed > MAX_FAILURE_FRACTION * B or len(kept) < 2:
        raise EnsembleError(f"{failed} of {B} bootstrap replicates failed")
    ens = BootstrapEnsemble(tuple(th for th, _ in kept), np.array([ll for _, ll in kept]),
                            seed=seed, n_failed=failed)
    if match is not None:
        ens = match_replicates(ens, theta_hat, spec, key=match)
    return ens


# -------------------------------------------------------------------- matching

def _match_cost(theta, ref, spec, key):
    if key == "pi":
        return float(np.abs(theta.pi - ref.pi).sum())
    if key == "A":
        return float(np.abs(theta.A - ref.A).sum())
    if key == "cov":
        a = stationary_measures(theta, spec, 0).cov
        b = stationary_measures(ref, spec, 0).cov
        return float(np.abs(a - b).sum())
    raise ValueError("matching key must be 'pi', 'A' or 'cov'")


def best_permutation(theta: ThetaParams, ref: ThetaParams, spec: ModelSpec,
                     key: str = "pi") -> np.ndarray:
    """Permutation of ``theta``'s regimes that best matches ``ref`` (first wins ties)."""
    M = spec.M
    if M > 8:
        raise ValueError("exhaustive matching is limited to M <= 8")
    best, cost = None, np.inf
    for perm in itertools.permutations(range(M)):
        c = _match_cost(permute_regimes(theta, perm), ref, spec, key)
        if c < cost - 1e-15:
            best, cost = perm, c
    return np.array(best)


def match_replicates(ens: BootstrapEnsemble, theta_hat: ThetaParams, spec: ModelSpec,
                     key: str = "pi") -> BootstrapEnsemble:
    reps = tuple(permute_regimes(th, best_permutation(th, theta_hat, spec, key))
                 for th in ens.replicates)
    return replace(ens, replicates=reps)


# --------------------------------------------------------------------- targets

def extract_targets(theta: ThetaParams, spec: ModelSpec, names: Sequence[str],
                    reference: Optional[ThetaParams] = None, max_lag: int = 5) -> dict:
    """Scalar targets as flat arrays keyed by name.

    A and Q are basis-dependent in the latent-state models; when
    ``reference`` is given they are first re-expressed in its basis.
    """
    out = {}
    bad = set(names) - set(TARGETS)
    if bad:
        raise ValueError(f"unknown targets {sorted(bad)}")
    if spec.kind is Kind.VAR and set(names) & {"R", "CCt"}:
        raise ValueError("R and CCt are not parameters of the switching VAR model")
    th = align_basis(theta, reference, spec) if reference is not None else theta
    meas = None
    for name in names:
        if name in ("cov", "corr", "acf", "pcorr"):
            if meas is None:
                meas = stationary_measures(theta, spec, max_lag)
            out[name] = getattr(meas, name)
        elif name == "Z":
            out[name] = np.array(theta.Z)
        elif name == "A":
            out[name] = np.array(th.A)
        elif name == "Q":
            out[name] = np.array(th.Q)
        elif name == "R":
            out[name] = np.array(theta.R[0])
        elif name == "CCt":
            k = 1 if spec.kind is Kind.DYN else spec.M
            out[name] = np.stack([projection(theta.C[j]) for j in range(k)])
    return out


def target_table(ens: BootstrapEnsemble, theta_hat: ThetaParams, spec: ModelSpec,
                 names: Sequence[str], max_lag: int = 5):
    """(labels, estimates (K,), replicate values (B, K)) for the named targets."""
    est = extract_targets(theta_hat, spec, names, max_lag=max_lag)
    labels = []
    for name in names:
        for idx in np.ndindex(est[name].shape):
            labels.append((name, tuple(int(i) + 1 for i in idx)))
    flat = lambda d: np.concatenate([np.ravel(d[n]) for n in names])
    values = np.stack([flat(extract_targets(th, spec, names, reference=theta_hat, max_lag=max_lag))
                       for th in ens.replicates])
    return tuple(labels), flat(est), values


# ----------------------------------------------------------------------- CIs

def confidence_intervals(values, estimate, level: float = 0.9, method: str = "percentile",
                         names: Optional[Sequence] = None) -> ConfidenceBands:
    """Bootstrap CIs at confidence ``level`` = 1 - alpha.

    percentile: empirical alpha/2 and 1 - alpha/2 quantiles (linear
    interpolation between order statistics); basic: the percentile interval
    reflected about the estimate; normal: estimate - bias +/- z se with bias =
    mean(replicates) - estimate and se the n - 1 standard deviation.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    B = values.shape[0]
    if B < 2:
        raise ValueError("at least two replicates are required")
    if values.shape[1] != estimate.size:
        raise ValueError("estimate length does not match replicate values")
    if method != "normal" and B < 20:
        warnings.warn(f"quantile intervals from only {B} replicates are unreliable",
                      RuntimeWarning, stacklevel=2)
    alpha = 1.0 - level
    if method == "normal":
        bias = values.mean(axis=0) - estimate
        se = values.std(axis=0, ddof=1)
        z = sstats.norm.ppf(1.0 - alpha / 2.0)
        centre = estimate - bias
        lower, upper = centre - z * se, centre + z * se
    else:
        lo, hi = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear")
        if method == "percentile":
            lower, upper = lo, hi
        else:
            lower, upper = 2.0 * estimate - hi, 2.0 * estimate - lo
    names = tuple(names) if names is not None else tuple(range(estimate.size))
    return ConfidenceBands(names, estimate, lower, upper, method, level)


__all__ = ["BootstrapEnsemble", "ConfidenceBands", "EnsembleError", "parametric_bootstrap",
           "match_replicates", "best_permutation", "confidence_intervals", "extract_targets",
           "target_table", "TARGETS", "METHODS"]

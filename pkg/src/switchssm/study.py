"""Monte Carlo harness comparing regime and parameter estimators on simulated data."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bootstrap import EnsembleError, confidence_intervals, extract_targets, parametric_bootstrap
from .core import ModelSpec, NotStationary, NumericalFailure, RankDeficient, ThetaParams
from .em import FitOptions, fit, fixed_regime_em
from .initialize import initialize, sliding_window_km
from .kim import decode_regimes, kim_smoother
from .metrics import classification_rate, match_to_truth, parameter_errors
from .simulate import make_study_theta, simulate_model

log = logging.getLogger(__name__)

METHODS = ("SW-KM", "SSM-OLS", "SSM-ML", "OR-OLS", "OR-ML")
_FAILURES = (NumericalFailure, RankDeficient, NotStationary, np.linalg.LinAlgError, ValueError)


@dataclass
class MethodResult:
    method: str
    rate: float
    errors: dict = field(default_factory=dict)
    theta: Optional[ThetaParams] = None


@dataclass
class SimulationRecord:
    index: int
    seed: int
    results: dict
    failures: dict = field(default_factory=dict)


def simulation_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def draw_dataset(spec: ModelSpec, T: int, seed: int, index: int):
    """Fresh study parameters and one simulated series for simulation ``index``."""
    rng = np.random.default_rng(simulation_seed(seed, index))
    theta = make_study_theta(spec, rng)
    sim = simulate_model(theta, spec, T, rng)
    return theta, sim


def _evaluate(name, theta_hat, S_hat, theta_true, S_true, spec):
    if theta_hat is None:
        return MethodResult(name, classification_rate(S_hat, S_true, spec.M))
    matched, _, rate = match_to_truth(theta_hat, S_hat, S_true, spec.M)
    return MethodResult(name, rate, parameter_errors(matched, theta_true, spec), matched)


def run_methods(y, S_true, theta_true: ThetaParams, spec: ModelSpec,
                methods: Sequence[str] = METHODS, fit_opts: Optional[FitOptions] = None,
                seed: int = 0):
    """Run the requested estimators on one dataset.

    Returns (results, failures) keyed by method name. SW-KM yields regimes
    only. SSM-OLS decodes regimes from the smoother run at the initial
    estimate. OR-OLS and OR-ML are given the true regime sequence.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    fit_opts = fit_opts or FitOptions(accelerate=True)
    S_true = np.asarray(S_true)
    results, failures = {}, {}
    theta_ols = None
    theta_or = None

    def attempt(name, fn):
        try:
            results[name] = fn()
        except _FAILURES as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
            log.warning("%s failed: %s", name, exc)

    if "SW-KM" in methods:
        attempt("SW-KM", lambda: _evaluate(
            "SW-KM", None, sliding_window_km(y, spec.M, seed=seed)[0], theta_true, S_true, spec))

    def ssm_ols():
        nonlocal theta_ols
        theta_ols = initialize(y, spec, seed=seed)
        S_hat = decode_regimes(kim_smoother(y, theta_ols, spec))
        return _evaluate("SSM-OLS", theta_ols, S_hat, theta_true, S_true, spec)

    if "SSM-OLS" in methods or "SSM-ML" in methods:
        attempt("SSM-OLS", ssm_ols)

    if "SSM-ML" in methods and theta_ols is not None:
        def ssm_ml():
            res = fit(y, spec, theta_ols, fit_opts)
            return _evaluate("SSM-ML", res.theta, res.S_hat, theta_true, S_true, spec)
        attempt("SSM-ML", ssm_ml)

    def or_ols():
        nonlocal theta_or
        theta_or = initialize(y, spec, seed=seed, S=S_true)
        return _evaluate("OR-OLS", theta_or, S_true, theta_true, S_true, spec)

    if "OR-OLS" in methods or "OR-ML" in methods:
        attempt("OR-OLS", or_ols)

    if "OR-ML" in methods and theta_or is not None:
        def or_ml():
            th = fixed_regime_em(y, spec, S_true, theta_or, fit_opts)
            return _evaluate("OR-ML", th, S_true, theta_true, S_true, spec)
        attempt("OR-ML", or_ml)

    results = {m: results[m] for m in methods if m in results}
    return results, failures


def _simulation_job(args):
    spec, T, seed, index, methods, fit_opts = args
    theta, sim = draw_dataset(spec, T, seed, index)
    results, failures = run_methods(sim.y, sim.S, theta, spec, methods, fit_opts, seed=index)
    for r in results.values():
        r.theta = None
    return SimulationRecord(index, seed, results, failures)


def run_study(spec: ModelSpec, T: int, n_sims: int, seed: int = 0,
              methods: Sequence[str] = METHODS, fit_opts: Optional[FitOptions] = None,
              jobs: int = 1) -> list[SimulationRecord]:
    """Simulate ``n_sims`` datasets with fresh study parameters and score every method."""
    args = [(spec, T, seed, i, tuple(methods), fit_opts) for i in range(n_sims)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_simulation_job, args))
    return [_simulation_job(a) for a in args]


def summarize(records: Sequence[SimulationRecord]) -> dict:
    """Mean classification rate and mean relative errors per method."""
    out = {}
    methods = {m for rec in records for m in rec.results}
    for m in [x for x in METHODS if x in methods]:
        res = [rec.results[m] for rec in records if m in rec.results]
        keys = sorted({k for r in res for k in r.errors})
        out[m] = {
            "n": len(res),
            "rate": float(np.mean([r.rate for r in res])),
            "errors": {k: float(np.mean([r.errors[k] for r in res if k in r.errors])) for k in keys},
            "median_errors": {k: float(np.median([r.errors[k] for r in res if k in r.errors]))
                              for k in keys},
        }
    return out


# ------------------------------------------------------------ coverage harness

@dataclass
class CoverageRecord:
    """Per-target arrays (flattened scalars) for one outer simulation."""

    index: int
    covered: dict
    lower: dict
    upper: dict
    truth: dict
    estimate: dict


def _coverage_job(args):
    spec, T, seed, index, B, level, method, targets, fit_opts = args
    theta, sim = draw_dataset(spec, T, seed, index)
    fit_opts = fit_opts or FitOptions(accelerate=True)
    theta0 = initialize(sim.y, spec, seed=index)
    res = fit(sim.y, spec, theta0, fit_opts)
    theta_hat, _, _ = match_to_truth(res.theta, res.S_hat, sim.S, spec.M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ens = parametric_bootstrap(theta_hat, spec, T, B, fit_opts,
                                   seed=int(simulation_seed(seed, index).generate_state(1)[0]))
    est = extract_targets(theta_hat, spec, targets)
    reps = [extract_targets(th, spec, targets, reference=theta_hat) for th in ens.replicates]
    truth = extract_targets(theta, spec, targets)
    rec = CoverageRecord(index, {}, {}, {}, {}, {})
    for name in targets:
        vals = np.stack([np.ravel(r[name]) for r in reps])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ci = confidence_intervals(vals, np.ravel(est[name]), level, method)
        t = np.ravel(truth[name])
        rec.covered[name] = ci.covers(t)
        rec.lower[name], rec.upper[name] = ci.lower, ci.upper
        rec.truth[name], rec.estimate[name] = t, ci.estimate
    return rec


def coverage_study(spec: ModelSpec, T: int, n_sims: int, B: int, seed: int = 0,
                   level: float = 0.9, method: str = "percentile", targets: Sequence[str] = ("Z",),
                   fit_opts: Optional[FitOptions] = None, jobs: int = 1):
    """Empirical coverage of bootstrap CIs over repeated simulations.

    Each simulation fits the model, matches the estimate to the truth by
    regime agreement, bootstraps it, and checks whether each true scalar lies
    in its interval. Returns ({target: coverage fraction}, records);
    simulations whose fit or bootstrap fail are logged and skipped.
    """
    targets = (targets,) if isinstance(targets, str) else tuple(targets)
    args = [(spec, T, seed, i, B, level, method, targets, fit_opts) for i in range(n_sims)]
    records = []

    def collect(it):
        for i, rec in it:
            if isinstance(rec, Exception):
                log.warning("coverage simulation %d failed: %s", i, rec)
            else:
                records.append(rec)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [(a[3], ex.submit(_coverage_job, a)) for a in args]
            collect((i, _result_or_error(f)) for i, f in futs)
    else:
        collect((a[3], _call_or_error(_coverage_job, a)) for a in args)
    if not records:
        raise EnsembleError("every coverage simulation failed")
    coverage = {t: float(np.concatenate([r.covered[t] for r in records]).mean()) for t in targets}
    return coverage, records


def _call_or_error(fn, a):
    try:
        return fn(a)
    except (EnsembleError, *_FAILURES) as exc:
        return exc


def _result_or_error(fut):
    try:
        return fut.result()
    except (EnsembleError, *_FAILURES) as exc:
        return exc


__all__ = ["METHODS", "MethodResult", "SimulationRecord", "run_methods", "run_study", "summarize",
           "draw_dataset", "coverage_study", "CoverageRecord"]

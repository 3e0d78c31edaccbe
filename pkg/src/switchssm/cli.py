"""Command-line front end: simulate, fit, select, bootstrap, extract and study.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import (METHODS as CI_METHODS, TARGETS, EnsembleError, confidence_intervals,
                        parametric_bootstrap, target_table)
from .core import ConstraintSet, Kind, ModelSpec, NotStationary, NumericalFailure, RankDeficient
from .em import FitOptions, fit as run_fit
from .initialize import initialize
from .io import (constraints_from_dict, load_params, params_document, read_series, save_params,
                 write_matrix, write_regimes, write_table)
from .simulate import make_study_theta, simulate_model
from .stationary import fc_feature, stationary_measures, weighted_fc_distance, weighted_fc_variance
from .study import METHODS as STUDY_METHODS, coverage_study, run_study, summarize

log = logging.getLogger("switchssm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- parsing

def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    return [int(x) for x in _csv_list(s)]


def _float_list(s: str) -> list[float]:
    return [float(x) for x in _csv_list(s)]


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_shared(p: argparse.ArgumentParser):
    g = p.add_argument_group("shared")
    g.add_argument("--kind", choices=[k.value for k in Kind])
    g.add_argument("--M", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--r", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--config", type=Path, help="INI file; [DEFAULT] and per-command sections")
    g.add_argument("--jobs", type=int, help="worker processes")
    g.add_argument("-v", "--verbose", action="count", default=0)


def _add_fit_options(p: argparse.ArgumentParser):
    g = p.add_argument_group("fitting")
    g.add_argument("--max-iter", type=int)
    g.add_argument("--tol", type=float, help="relative log-likelihood tolerance")
    g.add_argument("--accelerate", type=_bool, help="alternate switching and fixed-regime EM")
    g.add_argument("--daem", type=_float_list, help="annealing exponents, e.g. 0.5,0.8,1")
    g.add_argument("--kappa", type=int, help="number of initialization intervals")
    g.add_argument("--segmentation", choices=["equal", "binary"])
    g.add_argument("--diag-Q", type=_bool)
    g.add_argument("--diag-R", type=_bool)
    g.add_argument("--diag-Sigma", type=_bool)
    g.add_argument("--equal", type=_csv_list, help="parameters shared across regimes (A,C,Q,mu,Sigma)")
    g.add_argument("--stable", type=_bool, help="enforce stable dynamics")
    g.add_argument("--epsilon", type=float, help="stability margin")
    g.add_argument("--constraints", type=Path, help="JSON constraint document")


DEFAULTS = {
    "kind": "dyn", "M": 2, "p": 1, "r": 1, "N": None, "T": None, "seed": 0, "out": Path("."),
    "jobs": 1, "max_iter": 500, "tol": 1e-6, "accelerate": True, "daem": None, "kappa": None,
    "segmentation": "equal", "diag_Q": False, "diag_R": False, "diag_Sigma": False,
    "equal": [], "stable": True, "epsilon": 0.02, "constraints": None, "params": None,
    "input": None, "B": 100, "targets": ["cov", "corr", "acf", "Z"], "methods": list(CI_METHODS),
    "level": 0.9, "match": "pi", "max_lag": 5, "M_values": None, "r_values": None,
    "n_sims": 10, "cells": None, "study_methods": list(STUDY_METHODS), "coverage": False,
    "mape_denominator": "r",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchssm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a series from given or study parameters")
    _add_shared(p)
    p.add_argument("--N", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--params", type=Path, help="params.json to simulate from")

    for name, hlp in (("fit", "fit a switching model to a series"),
                      ("select", "fit a grid of (M, r) and tabulate selection scores")):
        p = sub.add_parser(name, help=hlp)
        _add_shared(p)
        p.add_argument("--input", type=Path, help="CSV series (rows = time)")
        p.add_argument("--mape-denominator", choices=["r", "N"])
        _add_fit_options(p)
        if name == "select":
            p.add_argument("--M-values", type=_int_list)
            p.add_argument("--r-values", type=_int_list)

    p = sub.add_parser("bootstrap", help="parametric bootstrap confidence intervals")
    _add_shared(p)
    _add_fit_options(p)
    p.add_argument("--params", type=Path)
    p.add_argument("--T", type=int, help="series length (defaults to the fitted length)")
    p.add_argument("--B", type=int)
    p.add_argument("--targets", type=_csv_list, help=",".join(TARGETS))
    p.add_argument("--methods", type=_csv_list, help=",".join(CI_METHODS))
    p.add_argument("--level", type=float)
    p.add_argument("--match", choices=["pi", "A", "cov"])
    p.add_argument("--max-lag", type=int)

    p = sub.add_parser("extract", help="stationary measures and FC features")
    _add_shared(p)
    p.add_argument("--params", type=Path, nargs="+")
    p.add_argument("--max-lag", type=int)

    p = sub.add_parser("study", help="simulation study over a grid of settings")
    _add_shared(p)
    _add_fit_options(p)
    p.add_argument("--N", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--n-sims", type=int)
    p.add_argument("--cells", type=_csv_list, help="kind:N:T:n_sims entries")
    p.add_argument("--study-methods", type=_csv_list, help=",".join(STUDY_METHODS))
    p.add_argument("--coverage", type=_bool, help="also run the bootstrap coverage experiment")
    p.add_argument("--B", type=int)
    p.add_argument("--targets", type=_csv_list)
    p.add_argument("--level", type=float)
    return parser


def _converters(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a.type for a in sub.choices[command]._actions if a.dest != "help"}


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Fill unset options from the config file, then from built-in defaults."""
    values = {}
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(args.config)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        section = cp[args.command] if cp.has_section(args.command) else cp.defaults()
        own = set(cp._sections.get(args.command, {}))  # keys set in the command's own section
        conv = _converters(parser, args.command)
        for key, raw in section.items():
            dest = key.replace("-", "_")
            if dest not in conv:
                if key in own:
                    raise ConfigError(f"unknown config key {key!r} for {args.command}")
                continue
            fn = conv[dest] or str
            try:
                values[dest] = fn(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for dest, default in DEFAULTS.items():
        if getattr(args, dest, None) is None and dest in vars(args):
            setattr(args, dest, values.get(dest, default))
    return args


def _constraints(args) -> ConstraintSet:
    doc = {}
    if args.constraints is not None:
        try:
            doc = json.loads(Path(args.constraints).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read constraints: {exc}") from exc
    doc.setdefault("diag_Q", args.diag_Q)
    doc.setdefault("diag_R", args.diag_R)
    doc.setdefault("diag_Sigma", args.diag_Sigma)
    doc.setdefault("equal_across_regimes", list(args.equal))
    doc.setdefault("stable_A", args.stable)
    doc.setdefault("epsilon", args.epsilon)
    return constraints_from_dict(doc)


def _fit_options(args) -> FitOptions:
    daem = tuple(args.daem) if args.daem else None
    return FitOptions(max_iter=args.max_iter, tol_rel=args.tol, accelerate=args.accelerate,
                      daem=daem, seed=args.seed)


def _spec(args, N, constraints=None) -> ModelSpec:
    r = N if args.kind == "var" else args.r
    return ModelSpec(kind=args.kind, M=args.M, p=args.p, r=r, N=N,
                     constraints=constraints or ConstraintSet())


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                      for m in missing))


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.params is not None:
        theta, spec, _ = load_params(args.params)
    else:
        _require(args, "N")
        spec = _spec(args, args.N)
        theta = make_study_theta(spec, rng)
    _require(args, "T")
    if args.T < 1:
        raise ConfigError("--T must be positive")
    sim = simulate_model(theta, spec, args.T, rng)
    out = _outdir(args)
    write_matrix(out / "y.csv", sim.y, [f"ch{i + 1}" for i in range(spec.N)])
    write_regimes(out / "regimes.csv", sim.S)
    save_params(out / "params.json", theta, spec, seed=args.seed, T=args.T, source="simulate")
    log.info("wrote %s", out)
    return EXIT_OK


def _load_series(args):
    _require(args, "input")
    if not Path(args.input).is_file():
        raise ConfigError(f"input not found: {args.input}")
    return read_series(args.input)


def _fit_one(y, spec, args):
    theta0 = initialize(y, spec, args.kappa, seed=args.seed, segmentation=args.segmentation)
    return run_fit(y, spec, theta0, _fit_options(args))


def _scores(res, spec, y, denominator):
    from .em import selection_scores
    return selection_scores(res, spec, y, denominator)


def cmd_fit(args) -> int:
    y, names = _load_series(args)
    spec = _spec(args, y.shape[1], _constraints(args))
    out = _outdir(args)
    try:
        res = _fit_one(y, spec, args)
    except NumericalFailure as exc:
        if exc.best is not None:
            save_params(out / "params.json", exc.best, spec, seed=args.seed, T=y.shape[0],
                        status="numerical failure", channels=names)
        raise
    scores = _scores(res, spec, y, args.mape_denominator)
    dwell = res.stats.W.mean(axis=0)
    save_params(out / "params.json", res.theta, spec, seed=args.seed, T=y.shape[0],
                channels=names, dwell=dwell.tolist(), converged=bool(res.converged),
                n_passes=int(res.n_passes))
    write_regimes(out / "regimes.csv", res.S_hat, res.stats.W)
    write_table(out / "loglik_trace.csv", ["iteration", "loglik"],
                ((i + 1, L) for i, L in enumerate(res.loglik_trace)))
    (out / "scores.json").write_text(json.dumps(scores, indent=1))
    log.info("loglik %.6f, bic %.6f", scores["loglik"], scores["bic"])
    return EXIT_OK


def cmd_select(args) -> int:
    y, _ = _load_series(args)
    out = _outdir(args)
    cons = _constraints(args)
    Ms = args.M_values or [args.M]
    rs = [y.shape[1]] if args.kind == "var" else (args.r_values or [args.r])
    rows = []
    for M in Ms:
        for r in rs:
            spec = ModelSpec(kind=args.kind, M=M, p=args.p, r=r, N=y.shape[1], constraints=cons)
            try:
                res = _fit_one(y, spec, args)
            except (NumericalFailure, RankDeficient, NotStationary) as exc:
                log.warning("M=%d r=%d failed: %s", M, r, exc)
                continue
            s = _scores(res, spec, y, args.mape_denominator)
            rows.append([M, args.p, r, s["loglik"], s["n_free"], s["aic"], s["bic"], s["mape"]])
    if not rows:
        raise NumericalFailure("every candidate model failed")
    write_table(out / "selection.csv", ["M", "p", "r", "loglik", "n_free", "aic", "bic", "mape"],
                rows)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    _require(args, "params")
    theta, spec, meta = load_params(args.params)
    T = args.T or meta.get("T")
    if T is None:
        raise ConfigError("--T is required when the parameter file does not record it")
    bad = set(args.targets) - set(TARGETS)
    if bad:
        raise ConfigError(f"unknown targets {sorted(bad)}")
    bad = set(args.methods) - set(CI_METHODS)
    if bad:
        raise ConfigError(f"unknown CI methods {sorted(bad)}")
    out = _outdir(args)
    ens = parametric_bootstrap(theta, spec, int(T), args.B, _fit_options(args), seed=args.seed,
                               jobs=args.jobs, kappa=args.kappa, match=args.match)
    doc = {"B": ens.B, "seed": args.seed, "n_failed": ens.n_failed,
           "logliks": ens.logliks.tolist(),
           "replicates": [params_document(th, spec)["theta"] for th in ens.replicates]}
    (out / "ensemble.json").write_text(json.dumps(doc))
    labels, est, vals = target_table(ens, theta, spec, args.targets, args.max_lag)
    for method in args.methods:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ci = confidence_intervals(vals, est, args.level, method, labels)
        rows = ([name, ".".join(map(str, idx)), lo, e, hi]
                for (name, idx), lo, e, hi in zip(labels, ci.lower, ci.estimate, ci.upper))
        write_table(out / f"ci_{method}.csv", ["target", "index", "lower", "estimate", "upper"],
                    rows)
    return EXIT_OK


def _weights(theta, meta):
    w = meta.get("dwell")
    if w is not None:
        return np.asarray(w, dtype=float)
    # stationary distribution of the chain
    vals, vecs = np.linalg.eig(theta.Z.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def cmd_extract(args) -> int:
    _require(args, "params")
    out = _outdir(args)
    models = [load_params(p) for p in args.params]
    feats, weights = [], []
    multi = len(models) > 1
    for i, (theta, spec, meta) in enumerate(models):
        meas = stationary_measures(theta, spec, args.max_lag)
        d = out / f"model{i + 1}" if multi else out
        d.mkdir(exist_ok=True)
        ch = meta.get("channels") or [f"ch{k + 1}" for k in range(spec.N)]
        for j in range(spec.M):
            write_matrix(d / f"cov_{j + 1}.csv", meas.cov[j], ch)
            write_matrix(d / f"corr_{j + 1}.csv", meas.corr[j], ch)
            write_matrix(d / f"pcorr_{j + 1}.csv", meas.pcorr[j], ch)
            write_matrix(d / f"acf_{j + 1}.csv", meas.acf[j],
                         [f"lag{l}" for l in range(args.max_lag + 1)])
        feats.append(np.stack([fc_feature(meas, j) for j in range(spec.M)]))
        weights.append(_weights(theta, meta))
    nfeat = feats[0].shape[1]
    if any(f.shape[1] != nfeat for f in feats):
        raise ConfigError("parameter files have different channel counts")
    write_table(out / "fc_features.csv",
                ["model", "regime", "weight"] + [f"f{k + 1}" for k in range(nfeat)],
                ([i + 1, j + 1, weights[i][j], *feats[i][j]]
                 for i in range(len(feats)) for j in range(feats[i].shape[0])))
    if multi:
        n = len(feats)
        D = np.array([[weighted_fc_distance(feats[a], weights[a], feats[b], weights[b])
                       for b in range(n)] for a in range(n)])
        write_matrix(out / "fc_distance.csv", D, [f"model{i + 1}" for i in range(n)])
        rows = []
        for i in range(n):
            try:
                rows.append([i + 1, weighted_fc_variance(feats[i], weights[i])])
            except ValueError:
                rows.append([i + 1, "nan"])
        write_table(out / "fc_variance.csv", ["model", "variance"], rows)
    return EXIT_OK


def _study_cells(args):
    if args.cells:
        cells = []
        for c in args.cells:
            try:
                kind, N, T, n = c.split(":")
                cells.append((kind, int(N), int(T), int(n)))
            except ValueError as exc:
                raise ConfigError(f"bad study cell {c!r}; expected kind:N:T:n_sims") from exc
        return cells
    _require(args, "N", "T")
    return [(args.kind, args.N, args.T, args.n_sims)]


def cmd_study(args) -> int:
    out = _outdir(args)
    bad = set(args.study_methods) - set(STUDY_METHODS)
    if bad:
        raise ConfigError(f"unknown study methods {sorted(bad)}")
    opts = _fit_options(args)
    rate_rows, err_rows, summary, cov_rows = [], [], {}, []
    for kind, N, T, n in _study_cells(args):
        r = N if kind == "var" else args.r
        spec = ModelSpec(kind=kind, M=args.M, p=args.p, r=r, N=N, constraints=_constraints(args))
        log.info("cell %s N=%d T=%d (%d simulations)", kind, N, T, n)
        try:
            recs = run_study(spec, T, n, args.seed, args.study_methods, opts, args.jobs)
        except (NumericalFailure, RankDeficient, NotStationary, ValueError) as exc:
            log.error("cell %s N=%d T=%d failed: %s", kind, N, T, exc)
            continue
        for rec in recs:
            for m, res in rec.results.items():
                rate_rows.append([kind, N, T, rec.index + 1, m, res.rate])
                for par, e in sorted(res.errors.items()):
                    err_rows.append([kind, N, T, rec.index + 1, m, par, e])
            for m, msg in rec.failures.items():
                log.warning("simulation %d %s: %s", rec.index + 1, m, msg)
        summary[f"{kind}:{N}:{T}"] = summarize(recs)
        if args.coverage:
            try:
                cov, crecs = coverage_study(spec, T, n, args.B, args.seed, args.level,
                                            "percentile", args.targets, opts, args.jobs)
            except (EnsembleError, ValueError) as exc:
                log.error("coverage run failed: %s", exc)
                continue
            for target, c in cov.items():
                cov_rows.append([kind, N, T, target, len(crecs), args.B, args.level, c])
    write_table(out / "classification_rate.csv", ["kind", "N", "T", "sim", "method", "rate"],
                rate_rows)
    write_table(out / "relative_error.csv",
                ["kind", "N", "T", "sim", "method", "parameter", "error"], err_rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    if args.coverage:
        write_table(out / "coverage.csv",
                    ["kind", "N", "T", "target", "n_sims", "B", "level", "coverage"], cov_rows)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
            "bootstrap": cmd_bootstrap, "extract": cmd_extract, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = resolve(args, parser)
        return COMMANDS[args.command](args)
    except (NumericalFailure, NotStationary, EnsembleError) as exc:
        print(f"switchssm {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, RankDeficient, OSError) as exc:
        print(f"switchssm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

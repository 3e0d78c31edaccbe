"""File formats: parameter JSON, CSV series and tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .core import ConstraintSet, ModelSpec, ThetaParams

FLOAT_FMT = ".17g"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), FLOAT_FMT)
    return str(x)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix(path, X, header: Optional[Sequence[str]] = None) -> None:
    X = np.atleast_2d(np.asarray(X))
    header = header or [f"c{i + 1}" for i in range(X.shape[1])]
    write_table(path, header, X.tolist())


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_series(path):
    """(y (T, N), channel names) from a CSV with an optional header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data")
    if all(_is_number(c) for c in rows[0]):
        names = [f"ch{i + 1}" for i in range(len(rows[0]))]
    else:
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    try:
        y = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc
    if y.ndim != 2 or y.shape[0] == 0 or y.shape[1] != len(names):
        raise ValueError(f"{path}: ragged or empty table")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{path}: non-finite values")
    return y, names


def read_regimes(path) -> np.ndarray:
    """0-based regime labels from the ``regime`` column (stored 1-based)."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or "regime" not in rd.fieldnames:
            raise ValueError(f"{path}: missing 'regime' column")
        return np.array([int(row["regime"]) - 1 for row in rd])


def write_regimes(path, S, W=None) -> None:
    S = np.asarray(S)
    header = ["t", "regime"]
    if W is not None:
        header += [f"W{j + 1}" for j in range(W.shape[1])]
    rows = ([t + 1, int(s) + 1] + ([] if W is None else list(W[t])) for t, s in enumerate(S))
    write_table(path, header, rows)


# ----------------------------------------------------------------- parameters

def constraints_to_dict(c: ConstraintSet) -> dict:
    out = {
        "diag_Q": c.diag_Q, "diag_R": c.diag_R, "diag_Sigma": c.diag_Sigma,
        "equal_across_regimes": sorted(c.equal_across_regimes),
        "stable_A": c.stable_A, "epsilon": c.epsilon,
        "scale_C": None if c.scale_C is None else np.asarray(c.scale_C).tolist(),
    }
    for name in ("fixed_A", "fixed_C"):
        pair = getattr(c, name)
        out[name] = None if pair is None else {"mask": pair[0].tolist(), "values": pair[1].tolist()}
    return out


def constraints_from_dict(d: Optional[dict]) -> ConstraintSet:
    if not d:
        return ConstraintSet()
    kw = dict(d)
    for name in ("fixed_A", "fixed_C"):
        if kw.get(name) is not None:
            kw[name] = (np.asarray(kw[name]["mask"], dtype=bool),
                        np.asarray(kw[name]["values"], dtype=float))
    if "equal_across_regimes" in kw:
        kw["equal_across_regimes"] = frozenset(kw["equal_across_regimes"])
    unknown = set(kw) - set(ConstraintSet.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown constraint fields {sorted(unknown)}")
    return ConstraintSet(**kw)


def spec_to_dict(spec: ModelSpec) -> dict:
    return {"kind": spec.kind.value, "M": spec.M, "p": spec.p, "r": spec.r, "N": spec.N}


def spec_from_dict(d: dict, constraints: Optional[ConstraintSet] = None) -> ModelSpec:
    return ModelSpec(kind=d["kind"], M=int(d["M"]), p=int(d["p"]), r=int(d["r"]), N=int(d["N"]),
                     constraints=constraints or ConstraintSet())


def params_document(theta: ThetaParams, spec: ModelSpec, seed=None, **meta) -> dict:
    return {
        "spec": spec_to_dict(spec),
        "theta": theta.as_dict(),
        "constraints": constraints_to_dict(spec.constraints),
        "meta": {"seed": seed, "version": __version__, **meta},
    }


def save_params(path, theta: ThetaParams, spec: ModelSpec, seed=None, **meta) -> None:
    Path(path).write_text(json.dumps(params_document(theta, spec, seed, **meta), indent=1))


def load_params(path):
    """(theta, spec, meta) from a params.json document."""
    try:
        doc = json.loads(Path(path).read_text())
        spec = spec_from_dict(doc["spec"], constraints_from_dict(doc.get("constraints")))
        theta = ThetaParams.from_dict(doc["theta"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed parameter file ({exc})") from exc
    return theta, spec, doc.get("meta", {})


__all__ = ["read_series", "read_regimes", "write_regimes", "write_table", "write_matrix",
           "save_params", "load_params", "params_document", "constraints_to_dict",
           "constraints_from_dict", "spec_to_dict", "spec_from_dict", "fmt"]

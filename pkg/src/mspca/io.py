"""Reading data and writing results.

CSV files are comma separated with a dot decimal mark; data files carry a
header row, weight matrices do not. JSON numbers use the shortest repr that
reads back to the same double, so loadings round-trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from typing import Optional, Sequence

import numpy as np

from .core import CovarianceSet, LoadingsSet, MultiSourceData
from .exceptions import InvalidArgument

__all__ = [
    "read_data_csv",
    "standardize_median_mad",
    "read_weights_csv",
    "write_weights_csv",
    "to_jsonable",
    "write_json",
    "read_json",
    "write_records_csv",
    "read_records_csv",
    "covset_to_dict",
    "covset_from_dict",
    "loadings_to_dict",
    "loadings_from_dict",
    "fit_to_dict",
    "file_digest",
]


def read_data_csv(path: str, source_col: str):
    """Read a data file with one source-label column.

    Labels are mapped to sources 0..N-1 in order of first appearance.

    Returns
    -------
    data : MultiSourceData
    columns : list of str
        Names of the numeric columns.
    labels : list of str
        Original label of each source.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if source_col not in header:
        raise InvalidArgument(f"source column {source_col!r} not found in {path}")
    sc = header.index(source_col)
    columns = [h for j, h in enumerate(header) if j != sc]
    labels, codes, values = [], [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InvalidArgument(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
        lab = row[sc].strip()
        if lab not in labels:
            labels.append(lab)
        codes.append(labels.index(lab))
        try:
            values.append([float(x) for j, x in enumerate(row) if j != sc])
        except ValueError as exc:
            raise InvalidArgument(f"{path}:{ln}: non-numeric cell ({exc})") from exc
    X = np.asarray(values, dtype=float)
    if X.size == 0:
        raise InvalidArgument(f"{path} has no data rows")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument(f"{path} contains non-finite values")
    codes = np.asarray(codes)
    order = np.argsort(codes, kind="stable")
    return MultiSourceData(X[order], codes[order]), columns, labels


def standardize_median_mad(X) -> np.ndarray:
    """Center columns at the median and scale by the normalized MAD."""
    X = np.asarray(X, dtype=float)
    med = np.median(X, axis=0)
    mad = 1.4826 * np.median(np.abs(X - med), axis=0)
    if np.any(mad <= 0):
        raise InvalidArgument("a column has zero MAD and cannot be standardized")
    return (X - med) / mad


def read_weights_csv(path: str) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        return np.array([[float(x) for x in r] for r in rows])
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise InvalidArgument(f"{path}: non-numeric weight ({exc})") from exc


def write_weights_csv(path: str, W) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(W, dtype=float):
            w.writerow([repr(float(x)) for x in row])


def to_jsonable(obj):
    """Convert numpy containers and scalars into plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path: str, obj) -> None:
    # non-finite floats are written as NaN/Infinity, which json reads back
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=1)
        fh.write("\n")


def read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path} is not valid JSON: {exc}") from exc


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_records_csv(path: str, records: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Tidy CSV with one row per record; missing fields stay empty."""
    if columns is None:
        columns = []
        for r in records:
            columns += [c for c in r if c not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            w.writerow(["" if r.get(c) is None else _cell(r[c]) for c in columns])


def read_records_csv(path: str) -> list:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise InvalidArgument(f"cannot read {path}: {exc}") from exc


def covset_to_dict(cov: CovarianceSet) -> dict:
    return {"sigmas": cov.sigmas, "mus": cov.mus, "meta": cov.meta}


def covset_from_dict(d: dict) -> CovarianceSet:
    try:
        return CovarianceSet(np.asarray(d["sigmas"], dtype=float), np.asarray(d["mus"], dtype=float),
                             dict(d.get("meta", {})))
    except KeyError as exc:
        raise InvalidArgument(f"covariance record lacks {exc}") from exc


def loadings_to_dict(loadings: LoadingsSet, **extra) -> dict:
    """``components[l][i]`` is the loading vector of source ``i``."""
    return {"components": [np.asarray(V).T for V in loadings.components], **extra}


def loadings_from_dict(d: dict) -> LoadingsSet:
    try:
        comps = d["components"]
    except KeyError as exc:
        raise InvalidArgument("loadings record lacks 'components'") from exc
    return LoadingsSet([np.asarray(c, dtype=float).T.copy() for c in comps])


def fit_to_dict(fit) -> dict:
    return {
        "kind": "ssmrcd",
        "covariances": covset_to_dict(fit.covset),
        "subsets": fit.subsets,
        "objective": fit.objective,
        "rho": fit.rho_list,
        "c_alpha": fit.c_alpha,
        "lambda": fit.lam,
        "alpha": fit.alpha,
        "objective_trace": fit.trace,
    }


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()

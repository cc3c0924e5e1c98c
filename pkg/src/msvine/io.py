"""JSON model files and CSV data files.

A single vine is stored as ``{"d", "matrix", "families", "params", "trunc"}``
(plus ``"se"`` when standard errors are known); a Markov-switching model as
``{"p", "regimes": [vine, ...], "trans"}``. Family and parameter matrices are
d x d with ``null`` on and above the diagonal. Output is deterministic, so
loading and saving a file reproduces it byte for byte.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .ms_em import MSRVineModel
from .pair_copula import CopulaFamily
from .rvine import RVineSpec


class DataError(ValueError):
    pass


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def spec_to_dict(spec: RVineSpec) -> dict:
    d = spec.d
    fams = [[spec.copulas[r][c].family.value if r > c else None for c in range(d)] for r in range(d)]
    pars = [[[_num(v) for v in spec.copulas[r][c].params] if r > c else None for c in range(d)]
            for r in range(d)]
    out = {"d": d, "matrix": spec.matrix.m.tolist(), "families": fams, "params": pars,
           "trunc": spec.trunc_level}
    if spec.se is not None:
        out["se"] = [[[_num(v) for v in spec.se[r][c]] if r > c and spec.se[r][c] is not None
                      else None for c in range(d)] for r in range(d)]
    return out


def spec_from_dict(obj: dict) -> RVineSpec:
    try:
        matrix = np.array(obj["matrix"], dtype=int)
        d = int(obj.get("d", matrix.shape[0]))
        if matrix.shape != (d, d):
            raise DataError(f"matrix shape {matrix.shape} does not match d={d}")
        fams = [[None if f is None else CopulaFamily.from_tag(f) for f in row] for row in obj["families"]]
        se = obj.get("se")
        if se is not None:
            se = tuple(tuple(None if v is None else tuple(math.nan if x is None else float(x) for x in v)
                             for v in row) for row in se)
        return RVineSpec.from_arrays(matrix, fams, obj["params"], obj.get("trunc"), se)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed vine description: {exc}") from exc


def model_to_dict(model) -> dict:
    if isinstance(model, RVineSpec):
        return spec_to_dict(model)
    return {"p": model.p, "regimes": [spec_to_dict(s) for s in model.regimes],
            "trans": np.asarray(model.trans).tolist()}


def model_from_dict(obj: dict):
    """An :class:`MSRVineModel` for switching files, an :class:`RVineSpec` otherwise."""
    if "regimes" in obj:
        regimes = tuple(spec_from_dict(r) for r in obj["regimes"])
        p = int(obj.get("p", len(regimes)))
        if p != len(regimes):
            raise DataError(f"p={p} but {len(regimes)} regimes listed")
        trans = obj.get("trans")
        if trans is None:
            raise DataError("switching model needs a 'trans' matrix")
        return MSRVineModel(regimes, np.array(trans, dtype=float))
    return spec_from_dict(obj)


def as_switching(model) -> MSRVineModel:
    if isinstance(model, RVineSpec):
        return MSRVineModel((model,), np.ones((1, 1)))
    return model


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps(model_to_dict(model)))


def load_model(path):
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(obj)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def write_data(path, u):
    u = np.asarray(u, dtype=float)
    d = u.shape[1]
    write_csv(path, [f"u{i + 1}" for i in range(d)], u.tolist())


def read_data(path) -> np.ndarray:
    """Copula-scale data from a headed CSV file; every entry must lie in [0, 1]."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"data file {path} is empty (a header row is required)")
    d = len(rows[0])
    body = [r for r in rows[1:] if r]
    try:
        u = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), d)
    except ValueError as exc:
        raise DataError(f"data file {path}: {exc}") from exc
    if np.any(~np.isfinite(u)) or np.any((u < 0) | (u > 1)):
        raise DataError(f"data file {path}: values must lie in [0, 1]")
    return u

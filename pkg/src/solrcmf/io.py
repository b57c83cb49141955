"""Reading and writing collections, ground truth and fit reports.

Collection manifest (JSON)::

    {
      "format": "solrcmf-manifest",
      "views": [{"id": 1, "dim": 50, "name": "samples"}, ...],
      "matrices": [{"row": 1, "col": 2, "layer": 1, "path": "A.csv", "name": "A"}, ...]
    }

``name`` fields and ``layer`` are optional (layer defaults to 1).  Matrix
paths are relative to the manifest's directory.  Payloads are plain CSV
without header; an empty cell or a ``NaN`` literal marks a missing entry.

The ground-truth sidecar (``truth.json``) lists the true singular values,
noise variances and, per view, a CSV file with the true factors.

All JSON is written with a fixed key order and full float precision so that
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from .datamodel import DataCollection, MatrixKey, ObservedMatrix, build_collection
from .errors import IoError, SchemaMismatch
from .simulate import SUPPORT_TOL

MANIFEST_FORMAT = "solrcmf-manifest"
TRUTH_FORMAT = "solrcmf-truth"


def _clean(obj):
    """Make an object JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path, obj) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(_clean(obj), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc


def as_float(x) -> float:
    """Inverse of the non-finite encoding used by :func:`write_json`."""
    return float(x)


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IoError(f"matrix file not found: {path}")
    try:
        x = np.genfromtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise IoError(f"cannot parse {path}: {exc}") from exc
    return x


def write_matrix_csv(path, x, fmt: str = ".17g") -> None:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lines = [
        ",".join("" if np.isnan(v) else format(v, fmt) for v in row) for row in x
    ]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_manifest(path) -> DataCollection:
    path = Path(path)
    spec = read_json(path)
    base = path.parent
    try:
        views = [(int(v["id"]), int(v["dim"])) for v in spec["views"]]
        view_names = {int(v["id"]): str(v["name"]) for v in spec["views"] if "name" in v}
        entries, names = [], {}
        for m in spec["matrices"]:
            key = MatrixKey(int(m["row"]), int(m["col"]), int(m.get("layer", 1)))
            values = read_matrix_csv(base / m["path"])
            entries.append(ObservedMatrix.from_array(key, values))
            if "name" in m:
                names[key] = str(m["name"])
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"malformed manifest {path}: missing or invalid field {exc}") from exc
    return build_collection(views, entries, view_names, names)


def matrix_filename(data: DataCollection, key: MatrixKey) -> str:
    name = data.matrix_names.get(key)
    return f"{name}.csv" if name else f"X_{key.row}_{key.col}_{key.layer}.csv"


def save_manifest(data: DataCollection, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write every matrix as CSV plus a manifest referencing them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrices = []
    for key, m in data.matrices.items():
        fname = matrix_filename(data, key)
        write_matrix_csv(out / fname, np.where(m.mask, m.values, np.nan))
        entry = {"row": key.row, "col": key.col, "layer": key.layer, "path": fname}
        if key in data.matrix_names:
            entry["name"] = data.matrix_names[key]
        matrices.append(entry)
    views = []
    for v in data.view_ids:
        entry = {"id": v, "dim": data.views[v]}
        if v in data.view_names:
            entry["name"] = data.view_names[v]
        views.append(entry)
    path = out / manifest_name
    write_json(path, {"format": MANIFEST_FORMAT, "views": views, "matrices": matrices})
    return path


@dataclass
class Truth:
    """Ground truth read back from a sidecar."""

    V: Dict[int, np.ndarray]
    D: Dict[MatrixKey, np.ndarray]
    sigma2: Dict[MatrixKey, float]
    names: Dict[MatrixKey, str]
    meta: dict

    @property
    def k(self) -> int:
        return next(iter(self.D.values())).size

    @property
    def u_support(self) -> Dict[int, np.ndarray]:
        return {v: np.abs(x) > SUPPORT_TOL for v, x in self.V.items()}


def save_truth(out_dir, V, D, sigma2, names=None, meta=None, filename="truth.json") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = names or {}
    views = []
    for v in sorted(V):
        fname = f"truth_V_{v}.csv"
        write_matrix_csv(out / fname, V[v])
        views.append({"id": v, "dim": int(V[v].shape[0]), "factors": fname})
    matrices = []
    for key, d in D.items():
        key = MatrixKey(*key)
        entry = {"row": key.row, "col": key.col, "layer": key.layer, "d": list(map(float, d)),
                 "sigma2": float(sigma2[key])}
        if key in names:
            entry["name"] = names[key]
        matrices.append(entry)
    path = out / filename
    write_json(path, {"format": TRUTH_FORMAT, "meta": meta or {}, "views": views, "matrices": matrices})
    return path


def load_truth(path) -> Truth:
    path = Path(path)
    spec = read_json(path)
    if spec.get("format") != TRUTH_FORMAT:
        raise SchemaMismatch(f"{path} is not a ground-truth sidecar")
    try:
        V = {int(v["id"]): read_matrix_csv(path.parent / v["factors"]) for v in spec["views"]}
        D, sigma2, names = {}, {}, {}
        for m in spec["matrices"]:
            key = MatrixKey(int(m["row"]), int(m["col"]), int(m.get("layer", 1)))
            D[key] = np.asarray(m["d"], dtype=float)
            sigma2[key] = float(m.get("sigma2", "nan"))
            if "name" in m:
                names[key] = m["name"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed truth sidecar {path}: {exc}") from exc
    return Truth(V, D, sigma2, names, spec.get("meta", {}))


def key_str(key) -> str:
    return str(MatrixKey(*key))

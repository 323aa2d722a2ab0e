"""Shared domain types and serialization.

Every pipeline output keeps row ``i`` aligned with input sample ``i``.
Arrays stored on the frozen dataclasses below are marked read-only so
they can be shared between workers without copying.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class IdmError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(IdmError, ValueError):
    """A parameter violates its documented precondition."""


class DataValidationError(IdmError, ValueError):
    """Input data is malformed (shape, parse, or non-finite entries)."""


class ShapeError(DataValidationError):
    pass


class FormatError(DataValidationError):
    pass


class NumericalError(IdmError, ArithmeticError):
    """A numerical stage could not produce a valid result."""


class DegenerateGeometryError(NumericalError):
    pass


class ConnectivityError(NumericalError):
    pass


class SolverError(NumericalError):
    pass


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _check_finite(values, what):
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise DataValidationError(
            f"{what}: non-finite value {values[r, c]!r} at row {r}, column {c}")


@dataclass(frozen=True)
class PointCloud:
    """``N`` samples in ``R^m``; row ``i`` is sample ``x_i``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise ShapeError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 2:
            raise ShapeError(f"a point cloud needs at least 2 samples, got {pts.shape[0]}")
        _check_finite(pts, "points")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class FeatureSet:
    """Feature values ``y_i = H(x_i)``, one row per sample."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[1] < 1:
            raise ShapeError(f"features must be a 2-D array, got shape {vals.shape}")
        _check_finite(vals, "features")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def check_aligned(self, cloud: PointCloud) -> None:
        if self.N != cloud.N:
            raise ShapeError(
                f"feature rows ({self.N}) do not match point cloud rows ({cloud.N})")


@dataclass(frozen=True)
class NeighborGraph:
    """Ordered k-NN lists; column 0 is always the point itself at distance 0."""

    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        dist = np.asarray(self.distances, dtype=float)
        if idx.ndim != 2 or idx.shape != dist.shape:
            raise ShapeError("indices and distances must be matching N x k arrays")
        object.__setattr__(self, "indices", _frozen(idx, dtype=np.intp))
        object.__setattr__(self, "distances", _frozen(dist))

    @property
    def N(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def truncate(self, k: int) -> "NeighborGraph":
        if not 1 <= k <= self.k:
            raise ParameterError(f"cannot truncate a {self.k}-NN graph to k={k}")
        return NeighborGraph(self.indices[:, :k], self.distances[:, :k])


@dataclass(frozen=True)
class DiffusionEmbedding:
    """Coordinates ``x^(l)`` produced by one pass of the (iterated) map.

    ``iteration`` 0 denotes the raw input cloud, in which case ``s`` is 0 and
    ``local_dims`` may be empty.
    """

    coords: np.ndarray
    iteration: int = 0
    s: float = 0.0
    local_dims: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2:
            raise ShapeError(f"embedding coords must be 2-D, got shape {coords.shape}")
        _check_finite(coords, "embedding")
        if self.iteration < 0:
            raise ParameterError("iteration must be >= 0")
        dims = np.asarray(self.local_dims, dtype=float).ravel()
        if dims.size not in (0, coords.shape[0]):
            raise ShapeError("local_dims must have one entry per row")
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "local_dims", _frozen(dims))

    @property
    def N(self) -> int:
        return self.coords.shape[0]

    @property
    def M(self) -> int:
        return self.coords.shape[1]


# ---------------------------------------------------------------------------
# serialization

def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise FormatError(f"unsupported format {fmt!r} for {path} (expected csv or json)")
    return fmt


def _parse_float(token, row, col):
    try:
        return float(token)
    except ValueError:
        raise FormatError(
            f"cannot parse {token!r} as a number at row {row}, column {col}") from None


def read_matrix(path, fmt=None):
    """Read a numeric matrix from headerless CSV or the JSON envelope.

    Returns ``(matrix, meta)`` where ``meta`` is the JSON ``meta`` object (or
    an empty dict for CSV). No finiteness check is applied here.
    """
    fmt = _infer_format(path, fmt)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IdmError(f"cannot read {path}: {exc}") from exc

    if fmt == "json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
        if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
            raise FormatError(f"{path}: expected an object with 'shape' and 'data' keys")
        shape = tuple(obj["shape"])
        rows = obj["data"]
        if len(shape) != 2 or len(rows) != shape[0]:
            raise ShapeError(f"{path}: data has {len(rows)} rows, shape says {shape}")
        out = np.empty(shape, dtype=float)
        for r, row in enumerate(rows):
            if len(row) != shape[1]:
                raise ShapeError(
                    f"{path}: row {r} has {len(row)} entries, expected {shape[1]}")
            for c, v in enumerate(row):
                # json writes non-finite floats as bare NaN/Infinity tokens or strings
                out[r, c] = _parse_float(v, r, c) if isinstance(v, str) else float(v)
        return out, dict(obj.get("meta") or {})

    rows = [row for row in csv.reader(text.splitlines()) if row and any(t.strip() for t in row)]
    if not rows:
        raise ShapeError(f"{path}: file contains no rows")
    width = len(rows[0])
    out = np.empty((len(rows), width), dtype=float)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ShapeError(f"{path}: row {r} has {len(row)} columns, expected {width}")
        for c, tok in enumerate(row):
            out[r, c] = _parse_float(tok.strip(), r, c)
    return out, {}


def _json_number(v):
    # repr of a Python float is the shortest string that round-trips exactly
    return float(v) if math.isfinite(v) else repr(float(v))


def write_matrix(path, matrix, fmt=None, meta=None):
    """Write a matrix as headerless CSV or as the JSON envelope.

    Values use ``repr`` formatting so reading back is bit-exact.
    """
    fmt = _infer_format(path, fmt)
    path = Path(path)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for row in matrix:
                    w.writerow([repr(float(v)) for v in row])
        else:
            obj = {
                "schema": SCHEMA_VERSION,
                "shape": list(matrix.shape),
                "data": [[_json_number(v) for v in row] for row in matrix],
                "meta": meta or {},
            }
            path.write_text(json.dumps(obj))
    except OSError as exc:
        raise IdmError(f"cannot write {path}: {exc}") from exc


def load_point_cloud(path, fmt=None) -> PointCloud:
    data, _ = read_matrix(path, fmt)
    return PointCloud(data)


def load_features(path, fmt=None) -> FeatureSet:
    data, _ = read_matrix(path, fmt)
    return FeatureSet(data)


def save_point_cloud(cloud: PointCloud, path, fmt=None) -> None:
    write_matrix(path, cloud.points, fmt, meta={"kind": "point_cloud"})


def save_features(features: FeatureSet, path, fmt=None) -> None:
    write_matrix(path, features.values, fmt, meta={"kind": "features"})


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def save_embedding(e: DiffusionEmbedding, path, fmt=None) -> None:
    """Save an embedding.

    CSV output gets a ``<name>.meta.json`` sidecar holding iteration, ``s`` and
    the local dimensions; JSON output carries them under ``meta``.
    """
    fmt = _infer_format(path, fmt)
    meta = {
        "kind": "embedding",
        "iteration": int(e.iteration),
        "s": float(e.s),
        "local_dims": [float(v) for v in e.local_dims],
        "shape": list(e.coords.shape),
    }
    write_matrix(path, e.coords, fmt, meta=meta)
    if fmt == "csv":
        try:
            _sidecar(path).write_text(json.dumps(meta))
        except OSError as exc:
            raise IdmError(f"cannot write {_sidecar(path)}: {exc}") from exc


def load_embedding(path, fmt=None) -> DiffusionEmbedding:
    fmt = _infer_format(path, fmt)
    coords, meta = read_matrix(path, fmt)
    if fmt == "csv" and _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
    return DiffusionEmbedding(
        coords,
        iteration=int(meta.get("iteration", 0)),
        s=float(meta.get("s", 0.0)),
        local_dims=np.asarray(meta.get("local_dims", []), dtype=float),
    )

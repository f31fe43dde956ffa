"""Dataset ingestion, schema validation, and query-grid construction.

CSV is the only ingestion format: UTF-8, header row required, '.' decimal
separator, one observation per row. NaN/Inf anywhere in a used column is a
hard error; input is expected pre-cleaned. Datasets are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBounds, EmptyData, ParseError, SchemaError, ZeroResolution


@dataclass(frozen=True)
class Schema:
    """Column-role map: outcome, optional treatment, covariates, and the
    conditioning sub-vector (named covariate columns)."""

    outcome: str
    covariates: tuple[str, ...]
    conditioning: tuple[str, ...]
    treatment: str | None = None

    def __post_init__(self):
        if len(set(self.covariates)) != len(self.covariates):
            raise SchemaError("duplicate covariate names")
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate column")
        if not self.conditioning:
            raise SchemaError("schema needs at least one conditioning column")
        missing = [c for c in self.conditioning if c not in self.covariates]
        if missing:
            raise SchemaError(
                f"conditioning columns {missing} are not covariates; "
                "the conditioning vector must be a sub-vector of the covariates"
            )

    @property
    def x_indices(self) -> tuple[int, ...]:
        return tuple(self.covariates.index(c) for c in self.conditioning)

    def used_columns(self) -> list[str]:
        cols = [self.outcome]
        if self.treatment is not None:
            cols.append(self.treatment)
        cols.extend(self.covariates)
        return cols


@dataclass(frozen=True)
class Observation:
    """One row: outcome y, optional binary treatment w, covariates z, and the
    conditioning sub-vector x = z[schema.x_indices]."""

    y: float
    w: int | None
    z: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    z: np.ndarray
    schema: Schema
    w: np.ndarray | None = None
    _x_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2 or y.ndim != 1 or z.shape[0] != y.shape[0]:
            raise SchemaError("y must be (n,) and z must be (n, p) with matching n")
        if y.shape[0] < 2:
            raise EmptyData(f"need at least 2 observations, got {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ParseError("non-finite value in outcome column")
        if not np.all(np.isfinite(z)):
            raise ParseError("non-finite value in covariate columns")
        if z.shape[1] != len(self.schema.covariates):
            raise SchemaError("covariate matrix width does not match schema")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        if self.w is not None:
            w = np.asarray(self.w)
            if w.shape != y.shape:
                raise SchemaError("treatment column length mismatch")
            if not np.all((w == 0) | (w == 1)):
                raise ParseError("treatment indicator must be 0 or 1")
            object.__setattr__(self, "w", w.astype(np.int8))
        object.__setattr__(self, "_x_idx", np.asarray(self.schema.x_indices, dtype=np.int64))
        self.y.setflags(write=False)
        self.z.setflags(write=False)
        if self.w is not None:
            self.w.setflags(write=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def q(self) -> int:
        return self._x_idx.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.z[:, self._x_idx]

    def row(self, i: int) -> Observation:
        w = None if self.w is None else int(self.w[i])
        z = self.z[i]
        return Observation(y=float(self.y[i]), w=w, z=z, x=z[self._x_idx])


@dataclass(frozen=True)
class QueryVector:
    """d query points in the conditioning space, one per row."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 1:
            raise ZeroResolution("query vector must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ParseError("non-finite query point")
        object.__setattr__(self, "points", pts)
        self.points.setflags(write=False)

    @property
    def d(self) -> int:
        return self.points.shape[0]

    @property
    def q(self) -> int:
        return self.points.shape[1]


def _parse_cell(raw: str, line: int, col: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(f"non-numeric value {raw!r} in column {col!r}, line {line}") from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {raw!r} in column {col!r}, line {line}")
    return v


def load_dataset(path, schema: Schema) -> Dataset:
    """Read a CSV into an immutable Dataset; fails atomically on any bad cell."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        pos = {}
        for col in schema.used_columns():
            if col not in header:
                raise SchemaError(f"column {col!r} not found in header of {path}")
            pos[col] = header.index(col)

        ys, ws, zs = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            ys.append(_parse_cell(row[pos[schema.outcome]], line_no, schema.outcome))
            if schema.treatment is not None:
                v = _parse_cell(row[pos[schema.treatment]], line_no, schema.treatment)
                if v not in (0.0, 1.0):
                    raise ParseError(
                        f"treatment value {v!r} not in {{0,1}}, line {line_no}")
                ws.append(int(v))
            zs.append([_parse_cell(row[pos[c]], line_no, c) for c in schema.covariates])

    if len(ys) < 2:
        raise EmptyData(f"{path}: need at least 2 data rows, got {len(ys)}")
    w = np.array(ws, dtype=np.int8) if schema.treatment is not None else None
    return Dataset(y=np.array(ys), z=np.array(zs), schema=schema, w=w)


def save_dataset(ds: Dataset, path) -> None:
    """Write the used columns back out; load(save(ds)) round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.schema.used_columns())
        for i in range(ds.n):
            row = [repr(float(ds.y[i]))]
            if ds.w is not None:
                row.append(str(int(ds.w[i])))
            row.extend(repr(float(v)) for v in ds.z[i])
            writer.writerow(row)


def make_query_grid(bounds, resolution) -> QueryVector:
    """Cartesian product of per-axis cell centers, row-major (last axis fastest).

    Axis k with bounds (lo, hi) and resolution r contributes the centers
    lo + (i + 0.5) * (hi - lo) / r for i = 0..r-1.
    """
    bounds = list(bounds)
    resolution = list(resolution)
    if len(bounds) != len(resolution):
        raise SchemaError("bounds and resolution must have the same length")
    axes = []
    for (lo, hi), res in zip(bounds, resolution):
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise BadBounds(f"need lo < hi, got ({lo}, {hi})")
        res = int(res)
        if res < 1:
            raise ZeroResolution(f"resolution must be >= 1, got {res}")
        step = (hi - lo) / res
        axes.append(np.array([lo + (i + 0.5) * step for i in range(res)]))
    pts = np.array(list(itertools.product(*axes)), dtype=np.float64)
    return QueryVector(points=pts)

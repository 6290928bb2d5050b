"""
File formats: CSV point tables, key=value run configurations and Esri
ASCII grids.

Row numbers in parse errors are 1-based file line numbers, so the header
is row 1 and the first data row is row 2.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParseError

NODATA = -9999
COMPOSITION_ATOL = 1e-6


@dataclass(frozen=True, eq=False)
class PointTable:
    """Parsed point table.

    ``values`` and ``covariates`` are ``n x q`` arrays whose columns follow
    ``value_names`` and ``covariate_names``; ``rows`` holds the file line
    number of each record.
    """

    ids: tuple
    locs: np.ndarray
    values: np.ndarray
    value_names: tuple
    covariates: np.ndarray
    covariate_names: tuple
    rows: np.ndarray

    @property
    def n(self):
        return len(self.ids)

    def column(self, name):
        if name in self.value_names:
            return self.values[:, self.value_names.index(name)]
        if name in self.covariate_names:
            return self.covariates[:, self.covariate_names.index(name)]
        raise DomainError(f"no column {name!r}")


def _number(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", row=row, column=column)
    return v


def load_points(path, value_columns=None, covariate_columns=(), composition=False):
    """Read a CSV point table with an ``id,x,y,...`` header.

    ``value_columns`` defaults to every column that is not ``id``, ``x``,
    ``y`` or a covariate. With ``composition=True`` each row of values must
    be nonnegative and sum to one within ``COMPOSITION_ATOL``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        records = [(i + 2, rec) for i, rec in enumerate(reader) if any(c.strip() for c in rec)]
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise ParseError("duplicate header column", row=1, column=dup)
    covariate_columns = tuple(covariate_columns)
    if value_columns is None:
        value_columns = tuple(h for h in header if h not in ("id", "x", "y") + covariate_columns)
    value_columns = tuple(value_columns)
    for col in ("id", "x", "y") + value_columns + covariate_columns:
        if col not in header:
            raise ParseError("missing column", row=1, column=col)
    if not value_columns:
        raise ParseError("no value columns", row=1)
    pos = {h: i for i, h in enumerate(header)}
    ids, rows, xy, vals, covs = [], [], [], [], []
    seen = {}
    for row, rec in records:
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(rec)}", row=row)
        rid = rec[pos["id"]].strip()
        if not rid:
            raise ParseError("empty id", row=row, column="id")
        if rid in seen:
            raise ParseError(f"duplicate id {rid!r} (first on row {seen[rid]})", row=row, column="id")
        seen[rid] = row
        ids.append(rid)
        rows.append(row)
        xy.append([_number(rec[pos[c]], row, c) for c in ("x", "y")])
        vals.append([_number(rec[pos[c]], row, c) for c in value_columns])
        covs.append([_number(rec[pos[c]], row, c) for c in covariate_columns])
    n = len(ids)
    values = np.array(vals, dtype=float).reshape(n, len(value_columns))
    if composition:
        for r, v in zip(rows, values):
            if np.any(v < 0):
                col = value_columns[int(np.argmax(v < 0))]
                raise ParseError("negative proportion", row=r, column=col)
            if abs(v.sum() - 1.0) > COMPOSITION_ATOL:
                raise ParseError(f"proportions sum to {v.sum():.9g}, not 1", row=r)
    return PointTable(
        tuple(ids),
        np.array(xy, dtype=float).reshape(n, 2),
        values,
        value_columns,
        np.array(covs, dtype=float).reshape(n, len(covariate_columns)),
        covariate_columns,
        np.array(rows, dtype=int),
    )


def load_series(path):
    """Read a ``t,<col>,...`` CSV of observations, one row per time step.

    Returns ``(t, Y, names)``; ``t`` must be strictly increasing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        records = [(i + 2, rec) for i, rec in enumerate(reader) if any(c.strip() for c in rec)]
    if not header or header[0] != "t":
        raise ParseError("first column must be 't'", row=1, column=header[0] if header else None)
    if len(header) < 2:
        raise ParseError("no observation columns", row=1)
    t, Y = [], []
    for row, rec in records:
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(rec)}", row=row)
        t.append(_number(rec[0], row, "t"))
        Y.append([_number(c, row, h) for c, h in zip(rec[1:], header[1:])])
        if len(t) > 1 and t[-1] <= t[-2]:
            raise ParseError("time must be strictly increasing", row=row, column="t")
    return np.array(t), np.array(Y, dtype=float).reshape(len(t), len(header) - 1), tuple(header[1:])


def fmt(v):
    """Shortest round-trip text for a float (byte-stable)."""
    v = float(v)
    if v == 0:
        return "0"
    return repr(v)


def write_table(path, header, columns, ids=None):
    """Write columns of numbers (and an optional leading id column) as CSV."""
    cols = [np.asarray(c).ravel() for c in columns]
    n = cols[0].size if cols else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for i in range(n):
            row = [fmt(c[i]) for c in cols]
            w.writerow(([ids[i]] if ids is not None else []) + row)


# ---------------------------------------------------------------------------
# configuration


def parse_config(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. Returns a dict of
    strings in file order. Repeated keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected key=value", row=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}: empty key", row=lineno)
        if key in out:
            raise ParseError(f"{source}: duplicate key", row=lineno, column=key)
        out[key] = value
    return out


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# Esri ASCII grid


@dataclass(frozen=True)
class RasterSpec:
    """Raster geometry with the same attribute names as
    :class:`~geofield.gmrf.GridSpec` but no minimum size."""

    n_rows: int
    n_cols: int
    h: float = 1.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if int(self.n_rows) < 1 or int(self.n_cols) < 1:
            raise DomainError("raster needs at least one row and one column")
        if not float(self.h) > 0:
            raise DomainError("cell size must be > 0")

    @property
    def size(self):
        return self.n_rows * self.n_cols


def _cell(v):
    if not np.isfinite(v):
        return str(NODATA)
    s = format(float(v), ".6g")
    return "0" if s == "-0" else s


def write_ascii_grid(values, grid, path):
    """Write a row-major (row 0 south) field vector as an Esri ASCII grid.

    ``grid`` is a :class:`RasterSpec` or a :class:`~geofield.gmrf.GridSpec`.
    Rows are written north to south with 6 significant digits; NaN becomes
    ``-9999``.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size != grid.size:
        raise DomainError(f"field has {values.size} values for a {grid.n_rows}x{grid.n_cols} grid")
    arr = values.reshape(grid.n_rows, grid.n_cols)
    lines = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {_cell(grid.x0)}",
        f"yllcorner {_cell(grid.y0)}",
        f"cellsize {_cell(grid.h)}",
        f"NODATA_value {NODATA}",
    ]
    for r in range(grid.n_rows - 1, -1, -1):
        lines.append(" ".join(_cell(v) for v in arr[r]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ascii_grid(path):
    """Inverse of :func:`write_ascii_grid`: returns ``(values, RasterSpec)``."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    head = {}
    for i in range(6):
        parts = lines[i].split()
        if len(parts) != 2:
            raise ParseError("malformed header line", row=i + 1)
        head[parts[0].lower()] = parts[1]
    try:
        nc, nr = int(head["ncols"]), int(head["nrows"])
        grid = RasterSpec(nr, nc, float(head["cellsize"]), float(head["xllcorner"]), float(head["yllcorner"]))
        nodata = float(head["nodata_value"])
    except KeyError as exc:
        raise ParseError("missing header key", column=exc.args[0]) from None
    except ValueError as exc:
        raise ParseError(f"malformed header value: {exc}") from None
    body = lines[6:]
    if len(body) != nr:
        raise ParseError(f"expected {nr} data rows, found {len(body)}")
    rows = []
    for i, line in enumerate(body):
        vals = [_number(t, i + 7, None) for t in line.split()]
        if len(vals) != nc:
            raise ParseError(f"expected {nc} values, found {len(vals)}", row=i + 7)
        rows.append(vals)
    arr = np.array(rows[::-1], dtype=float)
    arr[arr == nodata] = np.nan
    return arr.ravel(), grid

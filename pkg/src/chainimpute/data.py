"""Data matrices with presence masks, CSV I/O and missingness patterns."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError

NA_TOKEN = "NA"
CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An n x p numeric table plus a per-cell presence mask.

    Missing cells hold NaN in ``values``; ``present`` is the authoritative
    record of which cells are observed. Arrays are made read-only on
    construction so one matrix can be shared between chains.
    """

    values: np.ndarray
    present: np.ndarray
    col_names: tuple[str, ...]
    col_kinds: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        present = np.array(self.present, dtype=bool)
        if values.ndim != 2 or values.shape != present.shape:
            raise InvalidArgument(
                f"values {values.shape} and present {present.shape} must be equal 2-D shapes"
            )
        p = values.shape[1]
        names = tuple(str(c) for c in self.col_names)
        kinds = tuple(self.col_kinds)
        if len(names) != p or len(kinds) != p:
            raise InvalidArgument("need one name and one kind per column")
        if len(set(names)) != p:
            raise InvalidArgument("column names must be unique")
        for j, kind in enumerate(kinds):
            if kind not in (CONTINUOUS, BINARY):
                raise InvalidArgument(f"unknown column kind {kind!r}")
            col = values[present[:, j], j]
            if not np.all(np.isfinite(col)):
                raise InvalidArgument(f"column {names[j]!r} has non-finite present values")
            if kind == BINARY and not np.all((col == 0.0) | (col == 1.0)):
                raise InvalidArgument(f"binary column {names[j]!r} has values outside {{0, 1}}")
        values[~present] = np.nan
        values.setflags(write=False)
        present.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "present", present)
        object.__setattr__(self, "col_names", names)
        object.__setattr__(self, "col_kinds", kinds)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def col_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            j = int(name_or_index)
            if not 0 <= j < self.n_cols:
                raise InvalidArgument(f"column index {j} out of range")
            return j
        try:
            return self.col_names.index(name_or_index)
        except ValueError:
            raise InvalidArgument(f"no column named {name_or_index!r}") from None

    def with_present(self, present: np.ndarray) -> "DataMatrix":
        """Same values, new mask. Cells newly marked missing lose their value."""
        present = np.asarray(present, dtype=bool)
        values = self.values.copy()
        values[~present] = np.nan
        return DataMatrix(values, present, self.col_names, self.col_kinds)

    def is_complete(self) -> bool:
        return bool(self.present.all())


def from_array(values, col_names=None, col_kinds=None, present=None) -> DataMatrix:
    """Build a DataMatrix from an array; NaN cells are missing unless a mask is given."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise InvalidArgument("values must be 2-D")
    if present is None:
        present = ~np.isnan(values)
    present = np.asarray(present, dtype=bool)
    if col_names is None:
        col_names = [f"x{j + 1}" for j in range(values.shape[1])]
    if col_kinds is None:
        col_kinds = [_infer_kind(values[present[:, j], j]) for j in range(values.shape[1])]
    return DataMatrix(values, present, tuple(col_names), tuple(col_kinds))


def _infer_kind(observed: np.ndarray) -> str:
    if observed.size and np.all((observed == 0.0) | (observed == 1.0)):
        return BINARY
    return CONTINUOUS


def load_csv(path, kinds: dict[str, str] | None = None) -> DataMatrix:
    """Read a header-first CSV where ``NA`` marks a missing cell.

    ``kinds`` maps column names to an explicit kind and overrides inference.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header)
    body = [r for r in rows[1:] if r]  # tolerate a trailing blank line
    values = np.empty((len(body), p))
    present = np.ones((len(body), p), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != p:
            raise ParseError(
                f"{path}: ragged row {i + 1}: expected {p} fields, got {len(row)}", row=i + 1
            )
        for j, tok in enumerate(row):
            tok = tok.strip()
            if tok == NA_TOKEN:
                values[i, j] = np.nan
                present[i, j] = False
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric token {tok!r} at row {i + 1}, column {j + 1}",
                    row=i + 1,
                    col=j + 1,
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"{path}: non-finite value at row {i + 1}, column {j + 1}", row=i + 1, col=j + 1
                )
            values[i, j] = v
    col_kinds = [_infer_kind(values[present[:, j], j]) for j in range(p)]
    for name, kind in (kinds or {}).items():
        if name not in header:
            raise InvalidArgument(f"schema names unknown column {name!r}")
        col_kinds[header.index(name)] = kind
    return DataMatrix(values, present, tuple(header), tuple(col_kinds))


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips (at most 17 significant digits)
    return repr(float(v))


def write_csv(dm: DataMatrix, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(dm.col_names)
            for i in range(dm.n_rows):
                writer.writerow(
                    [_fmt(v) if ok else NA_TOKEN for v, ok in zip(dm.values[i], dm.present[i])]
                )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def mcar_mask(dm: DataMatrix, rate: float, rng, reject_empty_rows: bool = False) -> DataMatrix:
    """Set each cell missing independently with probability ``rate``.

    With ``reject_empty_rows`` the mask of any row that lost every cell is
    redrawn until at least one cell survives.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidArgument(f"rate must lie in [0, 1), got {rate}")
    if not dm.is_complete():
        raise InvalidArgument("mcar_mask expects a fully observed matrix")
    gen = rng.gen
    present = gen.random(dm.values.shape) >= rate
    if reject_empty_rows:
        empty = ~present.any(axis=1)
        while empty.any():
            present[empty] = gen.random((int(empty.sum()), dm.n_cols)) >= rate
            empty = ~present.any(axis=1)
    return dm.with_present(present)


@dataclass(frozen=True)
class BivariatePattern:
    """Row blocks a (complete), b (second column missing), c (first column missing)."""

    n_a: int
    n_b: int
    n_c: int

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c) < 0:
            raise InvalidArgument("block sizes must be non-negative")

    @property
    def n_rows(self) -> int:
        return self.n_a + self.n_b + self.n_c

    @property
    def rows_a(self) -> np.ndarray:
        return np.arange(0, self.n_a)

    @property
    def rows_b(self) -> np.ndarray:
        return np.arange(self.n_a, self.n_a + self.n_b)

    @property
    def rows_c(self) -> np.ndarray:
        return np.arange(self.n_a + self.n_b, self.n_rows)


def bivariate_pattern(pat: BivariatePattern, dm: DataMatrix) -> DataMatrix:
    if dm.n_cols != 2 or dm.n_rows != pat.n_rows:
        raise InvalidArgument(
            f"pattern needs a {pat.n_rows}x2 matrix, got {dm.n_rows}x{dm.n_cols}"
        )
    if not dm.is_complete():
        raise InvalidArgument("bivariate_pattern expects a fully observed matrix")
    present = np.ones((pat.n_rows, 2), dtype=bool)
    present[pat.rows_b, 1] = False
    present[pat.rows_c, 0] = False
    return dm.with_present(present)


def iota_set(dm: DataMatrix, j) -> np.ndarray:
    """Rows where column ``j`` is the only missing cell."""
    j = dm.col_index(j)
    others = np.delete(dm.present, j, axis=1).all(axis=1)
    return np.flatnonzero(~dm.present[:, j] & others)


def missing_patterns(present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of a presence mask and the pattern id of every row."""
    patterns, inverse = np.unique(np.asarray(present, dtype=bool), axis=0, return_inverse=True)
    return patterns, inverse.ravel()


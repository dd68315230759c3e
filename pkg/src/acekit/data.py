"""Numeric datasets and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

import numpy as np

__all__ = ["Dataset", "DatasetError", "load_dataset", "read_csv", "write_csv", "format_float"]


class DatasetError(ValueError):
    pass


def format_float(v: float) -> str:
    # repr is the shortest string that round-trips the double exactly
    return repr(float(v))


@dataclass(frozen=True)
class Dataset:
    """Named real-valued columns of equal length."""

    names: tuple[str, ...]
    values: np.ndarray  # (n_rows, n_cols), float64, read-only

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise DatasetError(
                f"values shape {values.shape} does not match {len(self.names)} names"
            )
        if len(set(self.names)) != len(self.names):
            raise DatasetError(f"duplicate column names in {self.names}")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise DatasetError("column names must be non-empty strings")
        if not np.all(np.isfinite(values)):
            raise DatasetError("dataset contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    @classmethod
    def from_columns(cls, columns: Mapping[str, Iterable[float]]) -> "Dataset":
        names = tuple(columns)
        cols = [np.asarray(columns[n], dtype=float).ravel() for n in names]
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise DatasetError(f"columns have different lengths: {sorted(lengths)}")
        n = lengths.pop() if lengths else 0
        return cls(names, np.column_stack(cols) if cols else np.empty((n, 0)))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise DatasetError(f"no column named {name!r}") from None

    def columns(self, names: Iterable[str]) -> np.ndarray:
        names = list(names)
        missing = [n for n in names if n not in self.names]
        if missing:
            raise DatasetError(f"missing column(s): {missing}")
        idx = [self.names.index(n) for n in names]
        return self.values[:, idx]

    def to_csv(self, sink: IO[str] | None = None) -> str | None:
        return write_csv(self.names, self.values, sink)


def write_csv(header: Iterable[str], rows: np.ndarray | Iterable, sink: IO[str] | None = None):
    """Write rows as CSV with round-trip float formatting.

    Returns the text when ``sink`` is None.
    """
    buf = io.StringIO() if sink is None else sink
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([format_float(v) if not isinstance(v, str) else v for v in row])
    if sink is None:
        return buf.getvalue()
    return None


def read_csv(source) -> tuple[list[str], list[list[str]]]:
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8-sig")
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    else:
        with open(source, encoding="utf-8-sig", newline="") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise DatasetError("empty CSV: no header")
    return [h.strip() for h in rows[0]], rows[1:]


def load_dataset(source) -> Dataset:
    """Parse CSV (path, bytes, or file object) into a :class:`Dataset`.

    The first row is the header. Every body cell must parse as a finite float.
    """
    header, body = read_csv(source)
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DatasetError(f"duplicate header name(s): {dup}")
    if any(not h for h in header):
        raise DatasetError("empty header name")
    if not body:
        raise DatasetError("CSV has a header but no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DatasetError(
                f"row {i} has {len(row)} fields, expected {len(header)}"
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetError(
                    f"non-numeric cell {cell!r} at row {i}, column {header[j]!r}"
                ) from None
            if not math.isfinite(v):
                raise DatasetError(
                    f"non-finite cell {cell!r} at row {i}, column {header[j]!r}"
                )
            values[i - 1, j] = v
    return Dataset(tuple(header), values)

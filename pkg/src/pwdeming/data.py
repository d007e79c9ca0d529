"""Paired method-comparison data."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PairedSample:
    index: int
    x: float
    y: float


class MCDataset:
    """Ordered (X, Y) pairs measured on the same samples.

    ``x`` is the predicate method, ``y`` the test method.  Indices default to
    1..n and are carried through subsetting so that outlier and jackknife
    output can name the original samples.
    """

    __slots__ = ("x", "y", "index")

    def __init__(self, x, y, index=None, *, min_n: int = 3):
        x = np.array(x, dtype=float).ravel()
        y = np.array(y, dtype=float).ravel()
        if x.shape != y.shape:
            raise DataError(f"x and y lengths differ ({x.size} vs {y.size})")
        if x.size < min_n:
            raise DataError(f"need at least {min_n} pairs, got {x.size}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("x and y must be finite")
        if index is None:
            index = np.arange(1, x.size + 1)
        index = np.array(index, dtype=np.int64).ravel()
        if index.shape != x.shape:
            raise DataError("index length does not match data")
        if np.unique(index).size != index.size:
            raise DataError("sample indices must be unique")
        x.setflags(write=False)
        y.setflags(write=False)
        index.setflags(write=False)
        self.x = x
        self.y = y
        self.index = index

    @classmethod
    def from_samples(cls, samples) -> "MCDataset":
        samples = list(samples)
        return cls([s.x for s in samples], [s.y for s in samples], [s.index for s in samples])

    @property
    def n(self) -> int:
        return int(self.x.size)

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> list[PairedSample]:
        return [PairedSample(int(i), float(a), float(b)) for i, a, b in zip(self.index, self.x, self.y)]

    def subset(self, positions) -> "MCDataset":
        """Dataset restricted to the given positions (or boolean mask)."""
        pos = np.asarray(positions)
        return MCDataset(self.x[pos], self.y[pos], self.index[pos], min_n=1)

    def drop(self, position: int) -> "MCDataset":
        keep = np.ones(self.n, dtype=bool)
        keep[position] = False
        return self.subset(keep)

    def positions_of(self, indices) -> np.ndarray:
        lookup = {int(v): k for k, v in enumerate(self.index)}
        try:
            return np.array([lookup[int(i)] for i in indices], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown sample index {exc.args[0]}") from None

    def __repr__(self) -> str:
        return f"MCDataset(n={self.n})"


def data_scale(x) -> float:
    """Concentration scale used to normalize intercept tolerances."""
    s = float(np.mean(np.abs(x)))
    return s if s > 0 else 1.0


def parse_csv(text: str, *, min_n: int = 5) -> MCDataset:
    """Dataset from CSV text with a header naming ``x``, ``y`` and optionally ``id``.

    Column names are matched case-insensitively; other columns are ignored.
    Errors name the offending line.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV: a header row with x and y is required") from None
    names = [h.strip().lower() for h in header]
    if "x" not in names or "y" not in names:
        raise DataError(f"line 1: header must name columns x and y, got {header}")
    ix, iy = names.index("x"), names.index("y")
    iid = names.index("id") if "id" in names else None
    xs, ys, ids = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            xv, yv = float(row[ix]), float(row[iy])
        except ValueError:
            raise DataError(f"line {line}: x and y must be numbers, got {row[ix]!r}, {row[iy]!r}") from None
        if not (math.isfinite(xv) and math.isfinite(yv)):
            raise DataError(f"line {line}: x and y must be finite")
        xs.append(xv)
        ys.append(yv)
        if iid is not None:
            try:
                ids.append(int(row[iid]))
            except ValueError:
                raise DataError(f"line {line}: id must be an integer, got {row[iid]!r}") from None
    if len(xs) < min_n:
        raise DataError(f"need at least {min_n} data rows, got {len(xs)}")
    return MCDataset(xs, ys, ids if iid is not None else None, min_n=min_n)

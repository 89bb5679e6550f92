"""Tabular samples of (x, y, z) and the pseudo-copula rank transform.

Every test in this package operates on data mapped marginally into the open
unit interval by ``rank / (n + 1)``, with average ranks for ties.
"""

from __future__ import annotations

import csv
import itertools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyDataError, ParseError, SchemaError, ShapeError


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """n observations of scalar x, scalar y and a d-vector z.

    Arrays are copied and made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    transformed: bool = False
    x_name: str = "x"
    y_name: str = "y"
    z_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = _frozen(self.x).reshape(-1)
        y = _frozen(self.y).reshape(-1)
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(len(z), -1) if z.size else np.empty((len(x), 0))
        z.setflags(write=False)
        n = len(x)
        if n < 1:
            raise EmptyDataError("dataset has no observations")
        if len(y) != n or z.shape[0] != n:
            raise ShapeError(
                f"row counts differ: x={n}, y={len(y)}, z={z.shape[0]}"
            )
        names = tuple(self.z_names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise ShapeError(f"{len(names)} z names for {z.shape[1]} z columns")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z_names", names)
        if self.transformed:
            for name, col in self._columns():
                if not np.all((col > 0.0) & (col < 1.0)):
                    raise ShapeError(f"column {name!r} is not inside (0, 1)")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def columns(self) -> list[str]:
        return [self.x_name, self.y_name, *self.z_names]

    def _columns(self):
        yield self.x_name, self.x
        yield self.y_name, self.y
        for j, name in enumerate(self.z_names):
            yield name, self.z[:, j]

    def replace(self, **changes) -> "Dataset":
        kw = dict(
            x=self.x, y=self.y, z=self.z, transformed=self.transformed,
            x_name=self.x_name, y_name=self.y_name, z_names=self.z_names,
        )
        kw.update(changes)
        return Dataset(**kw)

    def to_csv(self, path: str | Path | None = None, comment: str | None = None) -> str:
        """Serialize with header ``x, y, z...`` in the stored column order.

        Floats are written with ``repr`` so a round trip is exact. An optional
        single-line ``comment`` goes first, prefixed with ``#``. Returns the
        text, and also writes it when ``path`` is given.
        """
        buf = io.StringIO()
        if comment is not None:
            if "\n" in comment:
                raise ValueError("comment must be a single line")
            buf.write(f"# {comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        table = np.column_stack([self.x, self.y, self.z])
        for row in table:
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def load_csv(
    path: str | Path,
    x: str = "x",
    y: str = "y",
    z: Sequence[str] = (),
) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Lines starting with ``#`` before the header are skipped.

    Parameters
    ----------
    path : file path
    x, y : names of the x and y columns
    z : names of the conditioning columns (may be empty)

    Raises
    ------
    SchemaError
        A named column is absent from the header.
    ParseError
        A designated cell is not a finite real; ``row`` is the 1-based data
        row index (the header is row 0).
    EmptyDataError
        The file holds a header but no data rows.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = iter(fh)
        first = next(lines, "")
        while first.startswith("#"):
            first = next(lines, "")
        reader = csv.reader(itertools.chain([first] if first else [], lines))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path}: file is empty") from None
        wanted = [x, y, *z]
        index = {}
        for name in wanted:
            if name not in header:
                raise SchemaError(f"column {name!r} not found in {path}")
            index[name] = header.index(name)
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            values = []
            for name in wanted:
                j = index[name]
                cell = record[j].strip() if j < len(record) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {r}, column {name!r}: cannot parse {cell!r}", row=r
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"row {r}, column {name!r}: non-finite value {cell!r}", row=r
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")
    table = np.array(rows, dtype=float)
    return Dataset(
        x=table[:, 0],
        y=table[:, 1],
        z=table[:, 2:],
        x_name=x,
        y_name=y,
        z_names=tuple(z),
    )


def pseudo_obs(values) -> np.ndarray:
    """Average ranks scaled by ``1/(n+1)``."""
    v = np.asarray(values, dtype=float)
    return rankdata(v, method="average") / (len(v) + 1.0)


def to_pseudo_obs(data: Dataset) -> Dataset:
    """Replace every column by its pseudo-copula observations."""
    if data.transformed:
        raise ValueError("dataset is already transformed")
    z = np.empty_like(data.z)
    for j in range(data.d):
        z[:, j] = pseudo_obs(data.z[:, j])
    return data.replace(
        x=pseudo_obs(data.x), y=pseudo_obs(data.y), z=z, transformed=True
    )

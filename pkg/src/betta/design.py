"""Design matrices with a mandatory intercept, and covariate-table ingestion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, TextIO, Union

import numpy as np

from betta.errors import ModelError, ParseError


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """``m x (p+1)`` covariate matrix whose first column is all ones.

    ``row_ids`` ties rows to sample ids so estimates can be aligned by name.
    """

    values: np.ndarray
    column_names: tuple[str, ...]
    row_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.values, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ModelError("design matrix must be 2-dimensional with at least one row")
        if len(self.column_names) != X.shape[1]:
            raise ModelError("column_names does not match the number of columns")
        if not np.all(X[:, 0] == 1.0):
            raise ModelError("first design column must be the intercept (all ones)")
        if not np.all(np.isfinite(X)):
            raise ModelError("design matrix contains non-finite values")
        if self.row_ids is not None and len(self.row_ids) != X.shape[0]:
            raise ModelError("row_ids does not match the number of rows")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ModelError(f"design matrix is rank deficient ({X.shape[1]} columns)")
        X.setflags(write=False)
        object.__setattr__(self, "values", X)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        """Number of non-intercept covariates."""
        return self.values.shape[1] - 1

    @classmethod
    def intercept_only(cls, row_ids: Sequence[str] | int) -> "DesignMatrix":
        if isinstance(row_ids, int):
            return cls(np.ones((row_ids, 1)), ("(Intercept)",))
        ids = tuple(row_ids)
        return cls(np.ones((len(ids), 1)), ("(Intercept)",), ids)

    @classmethod
    def from_columns(
        cls, columns: Mapping[str, Sequence[float]], row_ids: Sequence[str] | None = None
    ) -> "DesignMatrix":
        """Prepend an intercept to numeric covariate columns."""
        names = ["(Intercept)"] + list(columns)
        if columns:
            body = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()])
            X = np.column_stack([np.ones(body.shape[0]), body])
        else:
            if row_ids is None:
                raise ModelError("row_ids required for an intercept-only design")
            X = np.ones((len(row_ids), 1))
        return cls(X, tuple(names), tuple(row_ids) if row_ids is not None else None)

    def drop_rows(self, ids: Sequence[str]) -> "DesignMatrix":
        if self.row_ids is None:
            raise ModelError("design has no row ids")
        keep = [k for k, rid in enumerate(self.row_ids) if rid not in set(ids)]
        return DesignMatrix(
            self.values[keep], self.column_names, tuple(self.row_ids[k] for k in keep)
        )

    def reorder(self, ids: Sequence[str]) -> "DesignMatrix":
        """Rows permuted to follow ``ids``; every id must be present exactly once."""
        if self.row_ids is None:
            raise ModelError("design has no row ids")
        index = {rid: k for k, rid in enumerate(self.row_ids)}
        missing = [i for i in ids if i not in index]
        extra = sorted(set(self.row_ids) - set(ids))
        if missing or extra:
            raise ModelError(
                f"sample ids do not match the design: missing {missing}, unmatched {extra}"
            )
        order = [index[i] for i in ids]
        return DesignMatrix(self.values[order], self.column_names, tuple(ids))


def read_covariates(
    text: Union[str, TextIO],
    terms: Sequence[str] | None = None,
    source: str | None = None,
) -> tuple[DesignMatrix, dict[str, list[str]]]:
    """Parse a ``sample_id,<covariates...>`` table into a design matrix.

    Non-numeric columns are expanded to treatment-coded indicators named
    ``col[level]``, with the lexicographically first level as the reference.
    Returns the design and the levels used per categorical column (reference
    first).
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    rows = [r for r in csv.reader(stream) if r and any(x.strip() for x in r)]
    if not rows:
        raise ParseError("empty covariate table", source=source)
    header = [h.strip() for h in rows[0]]
    if header[0] != "sample_id":
        raise ParseError("first column must be 'sample_id'", line=1, source=source)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names", line=1, source=source)
    body = rows[1:]
    for k, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, found {len(row)}", line=k, source=source)
    ids = [row[0].strip() for row in body]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate sample_id in covariate table", source=source)
    names = header[1:] if terms is None else list(terms)
    unknown = [n for n in names if n not in header[1:]]
    if unknown:
        raise ModelError(f"unknown covariate columns {unknown}")

    columns: dict[str, list[float]] = {}
    levels: dict[str, list[str]] = {}
    for name in names:
        k = header.index(name)
        raw = [row[k].strip() for row in body]
        numeric = _as_numeric(raw)
        if numeric is not None:
            columns[name] = numeric
            continue
        lv = sorted(set(raw))
        levels[name] = lv
        for level in lv[1:]:
            columns[f"{name}[{level}]"] = [1.0 if x == level else 0.0 for x in raw]
    return DesignMatrix.from_columns(columns, ids), levels


def _as_numeric(raw):
    try:
        values = [float(x) for x in raw]
    except ValueError:
        return None
    if not all(math.isfinite(v) for v in values):
        return None
    return values

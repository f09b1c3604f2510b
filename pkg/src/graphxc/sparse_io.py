"""Reading and writing the sparse text formats used across the pipeline.

Two layouts are supported, both line oriented and 0-indexed:

* labeled matrix -- header ``N V L`` followed by one line per document of
  the form ``l1,l2,...<space>t1:v1 t2:v2 ...``. The label list may be
  empty, in which case the line starts with a space. The token list may
  also be empty.
* plain matrix -- header ``R C`` followed by one ``c:v`` list per row
  (label-text files, graphs, score matrices).

Values are parsed as 32-bit floats; wider accumulation happens downstream.
"""

from __future__ import annotations

import warnings
from typing import IO, Iterable, Iterator

import numpy as np
import scipy.sparse as sp


class FormatError(ValueError):
    """Malformed sparse text input (bad header, bad token, bad label list)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BoundsError(ValueError):
    """A column or label index is outside the declared dimension."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _parse_header(line: str, lineno: int, n_fields: int) -> tuple[int, ...]:
    parts = line.split()
    if len(parts) != n_fields:
        raise FormatError(
            f"expected header with {n_fields} integers, got {line.strip()!r}",
            lineno,
        )
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise FormatError(f"non-integer header field in {line.strip()!r}", lineno)
    if any(d < 0 for d in dims):
        raise FormatError(f"negative dimension in header {line.strip()!r}", lineno)
    return dims


class _CsrBuilder:
    """Accumulates rows and finalizes a canonical CSR matrix.

    Canonical means: per-row indices strictly ascending, duplicates summed,
    explicit zeros dropped. Rows that needed sorting or deduplication are
    counted so the caller can emit a single warning.
    """

    def __init__(self, n_cols: int, dtype=np.float32):
        self.n_cols = n_cols
        self.dtype = dtype
        self.indptr = [0]
        self.indices: list[np.ndarray] = []
        self.data: list[np.ndarray] = []
        self.unsorted_rows = 0

    def add_row(self, cols: np.ndarray, vals: np.ndarray, lineno: int) -> None:
        if cols.size and (cols.max() >= self.n_cols or cols.min() < 0):
            bad = cols[(cols >= self.n_cols) | (cols < 0)][0]
            raise BoundsError(
                f"index {bad} outside declared dimension {self.n_cols} "
                f"(row {len(self.indptr) - 1})",
                lineno,
            )
        if cols.size > 1 and np.any(np.diff(cols) <= 0):
            self.unsorted_rows += 1
            order = np.argsort(cols, kind="stable")
            cols, vals = cols[order], vals[order]
            if np.any(np.diff(cols) == 0):
                # merge duplicate indices by summation
                cols, inverse = np.unique(cols, return_inverse=True)
                merged = np.zeros(cols.shape, dtype=np.float64)
                np.add.at(merged, inverse, vals.astype(np.float64))
                vals = merged.astype(self.dtype)
        keep = vals != 0
        if not keep.all():
            cols, vals = cols[keep], vals[keep]
        self.indices.append(cols)
        self.data.append(vals)
        self.indptr.append(self.indptr[-1] + cols.size)

    def build(self, n_rows: int) -> sp.csr_matrix:
        if len(self.indptr) - 1 != n_rows:
            raise FormatError(
                f"header declares {n_rows} rows, file contains {len(self.indptr) - 1}"
            )
        if self.unsorted_rows:
            warnings.warn(
                f"{self.unsorted_rows} rows had non-ascending indices and were sorted",
                stacklevel=3,
            )
        indices = (
            np.concatenate(self.indices) if self.indices else np.empty(0, np.int64)
        )
        data = (
            np.concatenate(self.data) if self.data else np.empty(0, self.dtype)
        )
        mat = sp.csr_matrix(
            (data.astype(self.dtype), indices.astype(np.int64), np.asarray(self.indptr)),
            shape=(n_rows, self.n_cols),
        )
        return mat


def _parse_pairs(tokens: list[str], lineno: int, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    cols = np.empty(len(tokens), dtype=np.int64)
    vals = np.empty(len(tokens), dtype=dtype)
    for i, tok in enumerate(tokens):
        idx, sep, val = tok.partition(":")
        if not sep:
            raise FormatError(f"expected 'index:value', got {tok!r}", lineno)
        try:
            cols[i] = int(idx)
            vals[i] = float(val)
        except ValueError:
            raise FormatError(f"could not parse 'index:value' pair {tok!r}", lineno)
    return cols, vals


def read_labeled_matrix(path) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Read a ``N V L`` file; returns (features NxV, labels NxL binary)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty file", 1)
    n, v, l = _parse_header(lines[0], 1, 3)
    feats = _CsrBuilder(v)
    labels = _CsrBuilder(l)
    for row, line in enumerate(lines[1 : n + 1], start=2):
        head, _, rest = line.partition(" ")
        if ":" in head:
            raise FormatError(
                "missing label field (a line with no labels must start with a space)",
                row,
            )
        if head:
            try:
                lab_cols = np.array([int(t) for t in head.split(",")], dtype=np.int64)
            except ValueError:
                raise FormatError(f"could not parse label list {head!r}", row)
        else:
            lab_cols = np.empty(0, dtype=np.int64)
        labels.add_row(lab_cols, np.ones(lab_cols.size, dtype=np.float32), row)
        cols, vals = _parse_pairs(rest.split(), row)
        feats.add_row(cols, vals, row)
    return feats.build(n), labels.build(n)


def read_matrix(path) -> sp.csr_matrix:
    """Read a plain ``R C`` sparse text file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty file", 1)
    return read_matrix_lines(lines[1:], _parse_header(lines[0], 1, 2), offset=2)


def read_matrix_lines(
    lines: Iterable[str], dims: tuple[int, int], offset: int = 1, dtype=np.float32
) -> sp.csr_matrix:
    """Parse matrix body lines; ``offset`` is the 1-based line number of the first row."""
    rows, cols = dims
    builder = _CsrBuilder(cols, dtype=dtype)
    for i, line in enumerate(lines):
        c, v = _parse_pairs(line.split(), offset + i, dtype=dtype)
        builder.add_row(c, v, offset + i)
    return builder.build(rows)


def _fmt(value) -> str:
    # str() of a numpy scalar is its shortest round-trip representation
    return str(value)


def _row_pairs(mat: sp.csr_matrix, row: int) -> str:
    lo, hi = mat.indptr[row], mat.indptr[row + 1]
    return " ".join(
        f"{mat.indices[j]}:{_fmt(mat.data[j])}" for j in range(lo, hi)
    )


def write_labeled_matrix(path, feats: sp.csr_matrix, labels: sp.csr_matrix) -> None:
    if feats.shape[0] != labels.shape[0]:
        raise ValueError("features and labels must have the same number of rows")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{feats.shape[0]} {feats.shape[1]} {labels.shape[1]}\n")
        for i in range(feats.shape[0]):
            lab = ",".join(
                str(labels.indices[j])
                for j in range(labels.indptr[i], labels.indptr[i + 1])
            )
            fh.write(f"{lab} {_row_pairs(feats, i)}".rstrip() + "\n")


def write_matrix(path_or_file, mat: sp.csr_matrix) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh: IO[str] = open(path_or_file, "w", encoding="utf-8") if own else path_or_file
    try:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for i in range(mat.shape[0]):
            fh.write(_row_pairs(mat, i) + "\n")
    finally:
        if own:
            fh.close()


def iter_lines(path) -> Iterator[str]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n")

"""Input validation helpers shared by the estimator and library entry points."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def check_sparse_rows(x, n_cols: int | None = None, name: str = "X") -> sp.csr_matrix:
    """Coerce to canonical CSR float matrix and validate its indices.

    Accepts any scipy sparse format or a dense array. Ensures per-row
    indices are sorted, in bounds, and free of explicit zeros; optionally
    checks the column count.
    """
    if sp.issparse(x):
        out = x.tocsr().copy()
    else:
        arr = np.asarray(x)
        if arr.ndim != 2:
            raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
        out = sp.csr_matrix(arr)
    if n_cols is not None and out.shape[1] != n_cols:
        raise ValueError(f"{name} has {out.shape[1]} columns, expected {n_cols}")
    out.sort_indices()
    out.sum_duplicates()
    out.eliminate_zeros()
    if out.nnz and (out.indices.min() < 0 or out.indices.max() >= out.shape[1]):
        raise ValueError(f"{name} contains out-of-range column indices")
    if not np.issubdtype(out.dtype, np.floating):
        out = out.astype(np.float32)
    return out


def check_binary_labels(y, n_rows: int, name: str = "Y") -> sp.csr_matrix:
    """Validate a multilabel indicator matrix aligned with ``n_rows`` samples."""
    out = check_sparse_rows(y, name=name)
    if out.shape[0] != n_rows:
        raise ValueError(
            f"{name} has {out.shape[0]} rows but the input has {n_rows} samples"
        )
    out = (out != 0).astype(np.float32)
    return sp.csr_matrix(out)

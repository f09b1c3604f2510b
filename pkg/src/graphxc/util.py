"""Shared helpers: deterministic RNG substreams and small array utilities."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# Stream namespaces; keeping them distinct makes every stage's randomness
# independent of whether earlier stages ran (required for exact resume).
STREAM_GRAPH = 0
STREAM_CLUSTER = 1
STREAM_STAGE = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream identified by ``key``.

    Streams with distinct keys are statistically independent and do not
    depend on draw order elsewhere, so per-label / per-stage work can be
    scheduled in any order without changing results.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def l2_normalize_rows(mat):
    """Row-normalize a dense or CSR matrix; zero rows are left untouched."""
    if sp.issparse(mat):
        mat = mat.tocsr()
        norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return sp.csr_matrix(sp.diags(scale) @ mat)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return mat * scale


def topk_desc(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, sorted by (-value, index).

    Ties are broken toward the lower index so rankings are deterministic.
    """
    k = min(k, values.size)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k < values.size:
        # partition first, then widen to every value tied with the k-th so
        # the lexsort below can resolve ties toward lower indices
        kth = np.partition(values, values.size - k)[values.size - k]
        cand = np.flatnonzero(values >= kth)
    else:
        cand = np.arange(values.size)
    order = np.lexsort((cand, -values[cand]))
    return cand[order[:k]].astype(np.int64)


def gather_rows(mat, rows: np.ndarray):
    """Concatenated (data, indices, lengths) of the given CSR rows.

    Fully vectorized; the concatenation preserves row order.
    """
    starts = mat.indptr[rows]
    lens = mat.indptr[rows + 1] - starts
    total = int(lens.sum())
    offs = np.zeros(rows.size, dtype=np.int64)
    np.cumsum(lens[:-1], out=offs[1:])
    flat = np.repeat(starts - offs, lens) + np.arange(total, dtype=np.int64)
    return mat.data[flat], mat.indices[flat], lens


def topk_rows(values: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k indices sorted by (-value, index), shape (n, k).

    Vectorized argpartition with a per-row fallback for the rare rows where
    ties straddle the cut, so the result always matches :func:`topk_desc`.
    """
    n, m = values.shape
    k = min(k, m)
    if n == 1:
        return topk_desc(values[0], k)[None, :]
    if k == m:
        part = np.tile(np.arange(m, dtype=np.int64), (n, 1))
    else:
        part = np.argpartition(values, m - k, axis=1)[:, m - k :].astype(np.int64)
    part.sort(axis=1)
    vals = np.take_along_axis(values, part, axis=1)
    # stable sort on pre-sorted indices resolves ties toward lower index
    order = np.argsort(-vals, axis=1, kind="stable")
    top = np.take_along_axis(part, order, axis=1)
    if k < m:
        kth = vals.min(axis=1)
        boundary = (values == kth[:, None]).sum(axis=1) > (vals == kth[:, None]).sum(axis=1)
        for i in np.flatnonzero(boundary):
            top[i] = topk_desc(values[i], k)
    return top

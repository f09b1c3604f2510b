"""Label clustering for the shortlister.

Labels are summarized by centroids (sums of the feature vectors of their
positive documents), the centroids are smoothed through the correlation
graph so sparsely-observed labels borrow signal from their neighbors, and
the result is split by recursive balanced 2-means on the unit sphere.
Frequent labels are clustered separately from the rest so they cannot
absorb rare labels into their clusters.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .util import STREAM_CLUSTER, l2_normalize_rows, substream


def graph_centroids(features, labels: sp.csr_matrix, g: sp.csr_matrix | None):
    """Graph-smoothed, row-normalized label centroids.

    ``features`` holds one row per document (sparse token weights or dense
    embeddings); the centroid of a label is the sum over its positive
    documents, then mixed with its graph neighbors' centroids, then
    L2-normalized. Pass ``g=None`` to skip the smoothing.
    """
    binary = (labels != 0).astype(features.dtype)
    centroids = binary.T @ features
    if g is not None:
        centroids = g @ centroids
    return l2_normalize_rows(centroids)


def _row_mean(mat, rows: np.ndarray) -> np.ndarray:
    if sp.issparse(mat):
        return np.asarray(mat[rows].mean(axis=0)).ravel()
    return mat[rows].mean(axis=0)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v if n == 0 else v / n


def _balanced_split(
    mat, ids: np.ndarray, n_left: int, rng, max_iter: int = 50, tol: float = 1e-4
):
    """Split ``ids`` into (n_left, rest) by alternating balanced 2-means.

    Points are ranked by the difference of similarities to the two means;
    the top ``n_left`` go left. Ties (duplicate or zero centroids) resolve
    toward lower label ids, which makes the whole tree deterministic.
    """
    seeds = rng.choice(ids.size, size=2, replace=False)
    mu_left = _unit(np.asarray(mat[[ids[seeds[0]]]].todense()).ravel()
                    if sp.issparse(mat) else mat[ids[seeds[0]]].copy())
    mu_right = _unit(np.asarray(mat[[ids[seeds[1]]]].todense()).ravel()
                     if sp.issparse(mat) else mat[ids[seeds[1]]].copy())
    sub = mat[ids]
    prev_obj = -np.inf
    left_local = None
    for _ in range(max_iter):
        diff = np.asarray(sub @ (mu_left - mu_right)).ravel()
        order = np.lexsort((ids, -diff))
        new_left = order[:n_left]
        new_right = order[n_left:]
        base = np.asarray(sub @ mu_right).ravel()
        obj = float(base.sum() + diff[new_left].sum())
        if left_local is not None and (
            np.array_equal(new_left, left_local) or obj - prev_obj < tol
        ):
            left_local = new_left
            right_local = new_right
            break
        left_local, right_local = new_left, new_right
        prev_obj = obj
        mu_left = _unit(_row_mean(sub, left_local))
        mu_right = _unit(_row_mean(sub, right_local))
    return np.sort(ids[left_local]), np.sort(ids[right_local])


def _leaf_sizes(n: int, k: int) -> np.ndarray:
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    return sizes


def cluster_balanced(mat, ids: np.ndarray, n_leaves: int, rng) -> list[np.ndarray]:
    """Recursive balanced bisection of ``ids`` into ``n_leaves`` groups."""
    if n_leaves <= 1 or ids.size <= 1:
        return [np.sort(ids)]
    k_left = (n_leaves + 1) // 2
    n_left = int(_leaf_sizes(ids.size, n_leaves)[:k_left].sum())
    left, right = _balanced_split(mat, ids, n_left, rng)
    return cluster_balanced(mat, left, k_left, rng) + cluster_balanced(
        mat, right, n_leaves - k_left, rng
    )


def balanced_binary_cluster(
    centroids, levels: int, seed: int = 0
) -> list[np.ndarray]:
    """Split all rows of ``centroids`` into 2**levels balanced clusters."""
    n = centroids.shape[0]
    if 2**levels > n:
        raise ValueError(f"2^{levels} clusters exceed the {n} labels available")
    rng = substream(seed, STREAM_CLUSTER)
    return cluster_balanced(centroids, np.arange(n), 2**levels, rng)


def head_tail_split(label_freq: np.ndarray, threshold: int):
    """Label ids above / at-or-below the popularity threshold."""
    heads = np.flatnonzero(label_freq > threshold)
    tails = np.flatnonzero(label_freq <= threshold)
    return heads, tails


def cluster_labels(
    centroids,
    n_clusters: int,
    label_freq: np.ndarray | None = None,
    head_threshold: int | None = None,
    seed: int = 0,
    salt: int = 0,
) -> list[np.ndarray]:
    """Cluster labels into ``n_clusters`` groups, heads kept apart from tails.

    When a popularity split is requested, each side receives a share of the
    cluster budget proportional to its size (at least one each) and the two
    id spaces are concatenated, tail clusters first. ``salt`` separates the
    random streams of repeated clusterings under one seed.
    """
    n = centroids.shape[0]
    if n_clusters > n:
        raise ValueError(f"{n_clusters} clusters exceed the {n} labels available")
    rng = substream(seed, STREAM_CLUSTER, salt)
    if label_freq is None or head_threshold is None:
        return cluster_balanced(centroids, np.arange(n), n_clusters, rng)
    heads, tails = head_tail_split(label_freq, head_threshold)
    if heads.size == 0 or tails.size == 0:
        return cluster_balanced(centroids, np.arange(n), n_clusters, rng)
    k_head = int(np.clip(round(n_clusters * heads.size / n), 1, n_clusters - 1))
    k_head = min(k_head, heads.size)
    k_tail = n_clusters - k_head
    if k_tail > tails.size:
        raise ValueError(
            f"cannot form {n_clusters} clusters from {heads.size} head and "
            f"{tails.size} tail labels"
        )
    out = cluster_balanced(centroids, tails, k_tail, rng)
    out += cluster_balanced(centroids, heads, k_head, rng)
    return out


def assignment_matrix(clusters: list[np.ndarray], n_labels: int) -> sp.csr_matrix:
    """Binary L x K matrix with one nonzero per label row."""
    rows = np.concatenate(clusters) if clusters else np.empty(0, np.int64)
    cols = np.concatenate(
        [np.full(c.size, k, dtype=np.int64) for k, c in enumerate(clusters)]
    ) if clusters else np.empty(0, np.int64)
    if rows.size != n_labels or np.unique(rows).size != n_labels:
        raise ValueError("clusters must partition the label set")
    data = np.ones(rows.size, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(n_labels, len(clusters)))


def label_to_cluster(clusters: list[np.ndarray], n_labels: int) -> np.ndarray:
    out = np.full(n_labels, -1, dtype=np.int64)
    for k, c in enumerate(clusters):
        out[c] = k
    if (out < 0).any():
        raise ValueError("clusters must cover every label")
    return out

"""Cluster-based shortlisting with graph-assisted re-ranking.

A query is scored against one classifier per cluster (meta-label); the
provisional top clusters are re-ranked through the induced cluster-cluster
correlation graph, which can pull in clusters full of rare labels that the
cluster classifiers themselves missed. The union of the surviving clusters
is the label shortlist, used both for negative sampling during training
and to keep prediction cost sublinear in the number of labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit as sigmoid

from .util import gather_rows, topk_desc, topk_rows


@dataclass
class Shortlister:
    clusters: list[np.ndarray]
    assignment: sp.csr_matrix            # L x K, binary
    meta_classifiers: np.ndarray         # (K, D)
    beam: int
    rerank_graph: sp.csr_matrix | None   # induced cluster graph; None = no re-rank
    label_to_cluster: np.ndarray = field(init=False)
    cluster_order: np.ndarray = field(init=False)  # labels grouped by cluster
    cluster_ptr: np.ndarray = field(init=False)    # (K+1,) boundaries
    _rerank_t: sp.csr_matrix | None = field(init=False, repr=False)

    def __post_init__(self):
        n_labels, k = self.assignment.shape
        if len(self.clusters) != k:
            raise ValueError("assignment width disagrees with cluster list")
        if not 1 <= self.beam <= k:
            raise ValueError(f"beam size {self.beam} outside [1, {k}]")
        lab2c = np.full(n_labels, -1, dtype=np.int64)
        ptr = np.zeros(k + 1, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            lab2c[members] = c
            ptr[c + 1] = ptr[c] + members.size
        if (lab2c < 0).any():
            raise ValueError("clusters must partition the label set")
        self.label_to_cluster = lab2c
        self.cluster_ptr = ptr
        self.cluster_order = np.concatenate(self.clusters)
        self._rerank_t = (
            None if self.rerank_graph is None else self.rerank_graph.T.tocsr()
        )

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_labels(self) -> int:
        return self.assignment.shape[0]

    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self.cluster_ptr)


def game_rerank(p_tilde: np.ndarray, rerank_graph: sp.csr_matrix | None, beam: int):
    """Re-rank provisional cluster scores through the cluster graph.

    ``p_tilde`` is a dense score vector that is already zero outside the
    provisional top clusters. Returns (top cluster ids, final scores) where
    the score vector is zero outside the new top clusters. Rank ties go to
    the lower cluster id.
    """
    p = p_tilde if rerank_graph is None else rerank_graph @ p_tilde
    top = topk_desc(p, beam)
    out = np.zeros_like(p)
    out[top] = p[top]
    return top, out


def shortlist_batch(x_hat: np.ndarray, sl: Shortlister):
    """GAME shortlists for a batch of embedded queries.

    Returns (cluster ids (n, beam) ordered by rank, scores (n, K) dense,
    zero outside each row's shortlist).
    """
    n, k = x_hat.shape[0], sl.n_clusters
    raw = x_hat @ sl.meta_classifiers.T                      # (n, K)
    top = topk_rows(raw, sl.beam)
    if sl.rerank_graph is not None and n == 1:
        # accumulate the beam's rows of the transposed cluster graph
        data, idx, lens = gather_rows(sl._rerank_t, top[0])
        weights = np.repeat(sigmoid(raw[0][top[0]]), lens)
        p_full = np.bincount(idx, weights=data * weights, minlength=k)[None, :].astype(raw.dtype)
    elif sl.rerank_graph is not None:
        # the provisional scores have beam nonzeros per row, so the rerank
        # product is cheapest in sparse form
        order = np.argsort(top, axis=1)
        cols = np.take_along_axis(top, order, axis=1)
        vals = sigmoid(np.take_along_axis(raw, cols, axis=1))
        p_sparse = sp.csr_matrix(
            (vals.ravel(), cols.ravel(), np.arange(0, n * sl.beam + 1, sl.beam)),
            shape=(n, k),
        )
        p_full = np.asarray((p_sparse @ sl._rerank_t).todense(), dtype=raw.dtype)
    else:
        p_full = np.zeros_like(raw)
        np.put_along_axis(p_full, top, sigmoid(np.take_along_axis(raw, top, axis=1)), axis=1)
    top2 = topk_rows(p_full, sl.beam)
    p_out = np.zeros_like(p_full)
    np.put_along_axis(p_out, top2, np.take_along_axis(p_full, top2, axis=1), axis=1)
    return top2, p_out


def game_shortlist(x_hat: np.ndarray, sl: Shortlister):
    """Single-query wrapper around :func:`shortlist_batch`."""
    top, p = shortlist_batch(np.atleast_2d(x_hat), sl)
    return top[0], p[0]


def labels_in_clusters(sl: Shortlister, cluster_ids: np.ndarray) -> np.ndarray:
    """Sorted label ids contained in the given clusters."""
    parts = [sl.clusters[c] for c in np.sort(cluster_ids)]
    return np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)


def train_shortlists(
    x_hat: np.ndarray, sl: Shortlister, truth: sp.csr_matrix, batch: int = 4096
) -> list[np.ndarray]:
    """Per-point training shortlist: GAME clusters' labels plus all positives."""
    out: list[np.ndarray] = []
    for lo in range(0, x_hat.shape[0], batch):
        hi = min(lo + batch, x_hat.shape[0])
        top, _ = shortlist_batch(x_hat[lo:hi], sl)
        for i in range(hi - lo):
            labels = labels_in_clusters(sl, top[i])
            positives = truth.indices[truth.indptr[lo + i] : truth.indptr[lo + i + 1]]
            out.append(np.union1d(labels, positives))
    return out


def shortlist_recall(shortlists: list[np.ndarray], truth: sp.csr_matrix) -> float:
    """Fraction of positive (point, label) pairs covered by the shortlists."""
    hit = 0
    total = 0
    for i, labels in enumerate(shortlists):
        pos = truth.indices[truth.indptr[i] : truth.indptr[i + 1]]
        total += pos.size
        hit += np.isin(pos, labels, assume_unique=False).sum()
    return hit / total if total else 1.0


def save_clusters(path, clusters: list[np.ndarray]) -> None:
    """Dump the assignment as ``label_id cluster_id`` lines, label-ordered."""
    pairs = sorted(
        (int(label), c) for c, members in enumerate(clusters) for label in members
    )
    with open(path, "w", encoding="utf-8") as fh:
        for label, c in pairs:
            fh.write(f"{label} {c}\n")


def load_clusters(path) -> list[np.ndarray]:
    by_cluster: dict[int, list[int]] = {}
    n = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            label_s, cluster_s = line.split()
            by_cluster.setdefault(int(cluster_s), []).append(int(label_s))
            n = max(n, int(cluster_s) + 1)
    return [np.array(sorted(by_cluster.get(c, [])), dtype=np.int64) for c in range(n)]

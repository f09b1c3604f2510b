"""Prediction: shortlist, score, graph-expand, rank.

For each query the shortlister proposes ``beam`` clusters with scores p;
the per-label classifiers score only the labels inside those clusters; the
label scores are then spread through the label-correlation graph and
multiplied by their cluster's score to give the joint ranking score. With
beam = #clusters and identity graphs this reduces exactly to dense
one-vs-all ranking.

Scoring is organized in a label ordering grouped by cluster, so each
cluster's classifier rows form a contiguous block and a batch of queries
touches each block once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit as sigmoid

from .model import DocumentEncoder
from .shortlist import Shortlister, shortlist_batch
from .util import gather_rows, topk_desc


@dataclass
class Predictor:
    """A trained model packaged for inference."""

    encoder: DocumentEncoder
    classifiers: np.ndarray              # (L, D), evaluation-mode fused vectors
    shortlister: Shortlister
    graph: sp.csr_matrix | None          # label graph for score expansion
    topk: int = 5
    _w_grouped: np.ndarray = field(init=False, repr=False)
    _expand: sp.csr_matrix | None = field(init=False, repr=False)
    _grouped_graph: sp.csr_matrix | None = field(init=False, repr=False)
    _position_cluster: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = self.shortlister.cluster_order
        self._w_grouped = np.ascontiguousarray(self.classifiers[order])
        # contiguous transposed operands so sparse products do not copy
        self._embed_t = np.ascontiguousarray(self.encoder.embeddings.value.T)
        self._block_w_t = np.ascontiguousarray(self.encoder.block.weight.value.T)
        self._block_gain = self.encoder.block.gain.value
        if self.graph is None:
            self._expand = None
            self._grouped_graph = None
        else:
            grouped = self.graph[order][:, order].astype(self.classifiers.dtype)
            # row-major for the single-query path, transposed CSR for the
            # batched product; both in the classifier dtype so nothing is
            # converted per call
            self._grouped_graph = grouped.tocsr()
            self._expand = grouped.T.tocsr()
        self._position_cluster = np.repeat(
            np.arange(self.shortlister.n_clusters, dtype=np.int64),
            self.shortlister.cluster_sizes(),
        )

    @property
    def n_labels(self) -> int:
        return self.classifiers.shape[0]

    def embed(self, docs: sp.csr_matrix, batch: int = 8192) -> np.ndarray:
        out = np.empty((docs.shape[0], self.encoder.dim), dtype=self.classifiers.dtype)
        for lo in range(0, docs.shape[0], batch):
            hi = min(lo + batch, docs.shape[0])
            x0 = docs[lo:hi] @ self._embed_t
            h = self._block_gain * x0 + np.maximum(x0, 0) @ self._block_w_t
            out[lo:hi] = np.maximum(h, 0)
        return out

    def predict(self, docs: sp.csr_matrix, k: int | None = None, batch: int = 1024) -> sp.csr_matrix:
        """Joint scores of the top-k labels per document, as a CSR matrix."""
        k = self.topk if k is None else k
        if docs.shape[0] == 0:
            return sp.csr_matrix((0, self.n_labels))
        if docs.shape[0] <= batch:
            return self._predict_embedded(self.embed(docs), k)
        blocks = []
        for lo in range(0, docs.shape[0], batch):
            hi = min(lo + batch, docs.shape[0])
            blocks.append(self._predict_embedded(self.embed(docs[lo:hi]), k))
        return sp.vstack(blocks, format="csr")

    def predict_one(self, doc: sp.csr_matrix, k: int | None = None):
        """(label ids, scores) of one query, best first."""
        row = self.predict(doc, k)
        order = topk_desc(row.data, row.nnz)
        return row.indices[order], row.data[order]

    def predict_dense(self, docs: sp.csr_matrix, k: int | None = None, batch: int = 256) -> sp.csr_matrix:
        """Brute-force one-vs-all ranking over every label (no shortlist)."""
        k = self.topk if k is None else k
        rows = []
        for lo in range(0, docs.shape[0], batch):
            hi = min(lo + batch, docs.shape[0])
            x_hat = self.embed(docs[lo:hi])
            scores = sigmoid(x_hat @ self.classifiers.T)
            from .util import topk_rows

            top = topk_rows(scores, k)
            vals = np.take_along_axis(scores, top, axis=1)
            rows.append(_rows_to_csr(top, vals, self.n_labels))
        return sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, self.n_labels))

    # -- internals ----------------------------------------------------------

    def _predict_one_embedded(self, x_hat: np.ndarray, k: int) -> sp.csr_matrix:
        """Latency-oriented path for a single query.

        The graph expansion evaluates only the shortlisted labels' rows of
        the correlation graph, which is identical to the full product on
        the support of the classifier scores.
        """
        sl = self.shortlister
        top_clusters, p = shortlist_batch(x_hat, sl)
        cl = np.sort(top_clusters[0])
        p_row = p[0]
        x = x_hat[0]
        starts, ends = sl.cluster_ptr[cl], sl.cluster_ptr[cl + 1]
        sizes = ends - starts
        total = int(sizes.sum())
        offs = np.zeros(cl.size, dtype=np.int64)
        np.cumsum(sizes[:-1], out=offs[1:])
        positions = np.repeat(starts - offs, sizes) + np.arange(total, dtype=np.int64)
        logits = np.empty(total, dtype=x_hat.dtype)
        fill = 0
        for a, b in zip(starts, ends):
            logits[fill : fill + b - a] = self._w_grouped[a:b] @ x
            fill += b - a
        r_tilde = sigmoid(logits)
        if self._grouped_graph is not None:
            g = self._grouped_graph
            dense = np.zeros(self.n_labels, dtype=x_hat.dtype)
            dense[positions] = r_tilde
            gdata, gidx, lens = gather_rows(g, positions)
            contrib = gdata * dense[gidx]
            if contrib.size:
                row_starts = np.zeros(positions.size, dtype=np.int64)
                np.cumsum(lens[:-1], out=row_starts[1:])
                # reduceat misreads empty segments; clip and zero them after
                r = np.add.reduceat(contrib, np.minimum(row_starts, contrib.size - 1))
                r[lens == 0] = 0
            else:
                r = np.zeros(positions.size, dtype=x_hat.dtype)
        else:
            r = r_tilde
        joint = r * p_row[self._position_cluster[positions]]
        live = np.flatnonzero(joint > 0)
        pick = live[topk_desc(joint[live], k)]
        labels = sl.cluster_order[positions[pick]]
        col_order = np.argsort(labels, kind="stable")
        return sp.csr_matrix(
            (joint[pick][col_order], labels[col_order], np.array([0, pick.size])),
            shape=(1, self.n_labels),
        )

    def _predict_embedded(self, x_hat: np.ndarray, k: int) -> sp.csr_matrix:
        if x_hat.shape[0] == 1:
            return self._predict_one_embedded(x_hat, k)
        sl = self.shortlister
        n = x_hat.shape[0]
        top_clusters, p = shortlist_batch(x_hat, sl)         # (n, B), (n, K)

        # grouped-position index ranges of each point's shortlisted clusters
        cl = np.sort(top_clusters, axis=1)
        flat_cl = cl.ravel()
        sizes = sl.cluster_sizes()
        lens = sizes[flat_cl]
        starts = sl.cluster_ptr[flat_cl]
        total = int(lens.sum())
        offsets = np.zeros(lens.size, dtype=np.int64)
        np.cumsum(lens[:-1], out=offsets[1:])
        span = np.arange(total, dtype=np.int64)
        indices = np.repeat(starts - offsets, lens) + span   # grouped label positions
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens.reshape(n, -1).sum(axis=1), out=indptr[1:])

        # score each touched cluster block once for all points that chose it
        logits = np.empty(total, dtype=x_hat.dtype)
        if n == 1:
            # latency path: the selected blocks are contiguous slices
            x = x_hat[0]
            for c, off in zip(flat_cl, offsets):
                lo, hi = sl.cluster_ptr[c], sl.cluster_ptr[c + 1]
                logits[off : off + (hi - lo)] = self._w_grouped[lo:hi] @ x
        else:
            pair_point = np.repeat(np.arange(n, dtype=np.int64), cl.shape[1])
            order = np.argsort(flat_cl, kind="stable")
            sorted_cl = flat_cl[order]
            bounds = np.flatnonzero(np.diff(sorted_cl)) + 1
            for grp in np.split(order, bounds):
                c = flat_cl[grp[0]]
                lo, hi = sl.cluster_ptr[c], sl.cluster_ptr[c + 1]
                block = x_hat[pair_point[grp]] @ self._w_grouped[lo:hi].T
                logits[offsets[grp][:, None] + np.arange(hi - lo)] = block

        scored = sp.csr_matrix(
            (sigmoid(logits), indices, indptr), shape=(n, self.n_labels)
        )
        if self._expand is not None:
            expanded = (scored @ self._expand).tocsr()
        else:
            expanded = scored

        entry_point = np.repeat(np.arange(n), np.diff(expanded.indptr))
        joint = expanded.data * p[entry_point, self._position_cluster[expanded.indices]]

        # rank per point and emit in original label ids
        out_indices = np.empty(n * k, dtype=np.int64)
        out_data = np.empty(n * k, dtype=x_hat.dtype)
        out_indptr = np.zeros(n + 1, dtype=np.int64)
        cluster_order = sl.cluster_order
        fill = 0
        for i in range(n):
            lo, hi = expanded.indptr[i], expanded.indptr[i + 1]
            vals = joint[lo:hi]
            live = np.flatnonzero(vals > 0)
            pick = live[topk_desc(vals[live], k)]
            labels = cluster_order[expanded.indices[lo:hi][pick]]
            col_order = np.argsort(labels, kind="stable")
            m = pick.size
            out_indices[fill : fill + m] = labels[col_order]
            out_data[fill : fill + m] = vals[pick][col_order]
            fill += m
            out_indptr[i + 1] = fill
        return sp.csr_matrix(
            (out_data[:fill], out_indices[:fill], out_indptr),
            shape=(n, self.n_labels),
        )


def _rows_to_csr(cols: np.ndarray, vals: np.ndarray, n_cols: int) -> sp.csr_matrix:
    """Build a CSR matrix from fixed-width per-row (column, value) arrays."""
    n, k = cols.shape
    order = np.argsort(cols, axis=1, kind="stable")
    cols = np.take_along_axis(cols, order, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)
    indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
    return sp.csr_matrix((vals.ravel(), cols.ravel().astype(np.int64), indptr), shape=(n, n_cols))


def gameify_scores(
    r_tilde: np.ndarray,
    p: np.ndarray,
    g: sp.csr_matrix | None,
    label_to_cluster: np.ndarray,
) -> np.ndarray:
    """Reference joint-score computation for one query, all dense.

    ``r_tilde`` holds classifier scores (zero outside the shortlist), ``p``
    the per-cluster scores (zero outside the shortlist). Returns
    s = (G r~) * p[cluster(l)].
    """
    r = r_tilde if g is None else g @ r_tilde
    return r * p[label_to_cluster]


def game_external(
    scores: sp.csr_matrix,
    g: sp.csr_matrix | None = None,
    assignment: sp.csr_matrix | None = None,
    cluster_graph: sp.csr_matrix | None = None,
    beam: int | None = None,
) -> sp.csr_matrix:
    """Apply the graph re-ranking steps to score rows from any model.

    With only ``g``, each row is expanded through the label graph
    (r = G r~). Supplying ``assignment``, ``cluster_graph`` and ``beam``
    additionally derives cluster scores from the rows (column-normalized
    cluster means), re-ranks them through the cluster graph, and multiplies
    the expanded label scores by their cluster's re-ranked score, mirroring
    the full prediction pipeline. With no graphs this is the identity.
    """
    cluster_args = (assignment is not None, cluster_graph is not None, beam is not None)
    if any(cluster_args) and not all(cluster_args):
        raise ValueError("assignment, cluster_graph and beam must be given together")
    scores = scores.tocsr().astype(np.float64)
    expanded = scores if g is None else (scores @ g.T).tocsr()
    if assignment is None:
        expanded.sort_indices()
        return expanded

    m = assignment.tocsc().astype(np.float64)
    colsums = np.asarray(m.sum(axis=0)).ravel()
    scale = np.divide(1.0, colsums, out=np.zeros_like(colsums), where=colsums > 0)
    mn = (m @ sp.diags(scale)).tocsr()
    p_tilde = np.asarray((scores @ mn).todense())
    n, k = p_tilde.shape
    from .util import topk_rows

    beam = min(beam, k)
    top = topk_rows(p_tilde, beam)
    masked = np.zeros_like(p_tilde)
    np.put_along_axis(masked, top, np.take_along_axis(p_tilde, top, axis=1), axis=1)
    p = (cluster_graph @ masked.T).T
    top2 = topk_rows(p, beam)
    p_final = np.zeros_like(p)
    np.put_along_axis(p_final, top2, np.take_along_axis(p, top2, axis=1), axis=1)

    label_cluster = np.asarray(assignment.argmax(axis=1)).ravel()
    expanded = expanded.tocsr()
    expanded.sort_indices()
    rows = np.repeat(np.arange(n), np.diff(expanded.indptr))
    data = expanded.data * p_final[rows, label_cluster[expanded.indices]]
    out = sp.csr_matrix((data, expanded.indices.copy(), expanded.indptr.copy()), shape=expanded.shape)
    out.eliminate_zeros()
    return out

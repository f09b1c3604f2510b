"""Label-correlation graph construction.

The graph is inferred from the ground truth alone by running, for every
label, a fixed-length random walk with restarts over the bipartite
document-label relevance structure. Visit counts become edge weights;
frequent (head) labels are then disconnected so they cannot dominate, and
the result is rescaled so edges touching rare labels carry more weight.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import sparse_io
from .util import STREAM_GRAPH, substream


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 400
    restart_prob: float = 0.8
    head_threshold: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")
        if not 0.0 <= self.restart_prob <= 1.0:
            raise ValueError("restart_prob must lie in [0, 1]")
        if self.head_threshold < 1:
            raise ValueError("head_threshold must be >= 1")


@dataclass
class LabelGraph:
    """Normalized correlation graph plus the raw counts it came from."""

    g: sp.csr_matrix        # normalized weights, head rows/cols reduced to self-loops
    g_raw: sp.csr_matrix    # raw visit (or co-occurrence) counts
    head_labels: np.ndarray
    isolated: np.ndarray    # labels with no positive documents
    config: WalkConfig

    @property
    def n_labels(self) -> int:
        return self.g.shape[0]


class _Adjacency:
    """CSR views of label->documents and document->labels."""

    def __init__(self, labels: sp.csr_matrix):
        by_doc = labels.tocsr()
        by_label = labels.T.tocsr()
        self.doc_ptr = by_doc.indptr
        self.doc_labels = by_doc.indices.astype(np.int64)
        self.label_ptr = by_label.indptr
        self.label_docs = by_label.indices.astype(np.int64)
        self.n_labels = labels.shape[1]


def _walk_counts(adj: _Adjacency, start: int, cfg: WalkConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """One random walk; returns (visited label ids, visit counts)."""
    omega = cfg.walk_length
    lp, ld = adj.label_ptr, adj.label_docs
    dp, dl = adj.doc_ptr, adj.doc_labels
    if lp[start + 1] == lp[start]:
        # no relevant documents: all visits stay on the start label
        return np.array([start]), np.array([omega], dtype=np.int64)
    restarts = rng.random(omega) <= cfg.restart_prob
    # raw 63-bit draws reduced by modulo; the bias of ~degree/2^63 is far
    # below anything the downstream statistics can resolve
    draws = rng.integers(0, np.iinfo(np.int64).max, size=2 * omega)
    visits = np.empty(omega, dtype=np.int64)
    cur = start
    j = 0
    for t in range(omega):
        if restarts[t]:
            cur = start
        lo, hi = lp[cur], lp[cur + 1]
        doc = ld[lo + draws[j] % (hi - lo)]
        j += 1
        lo, hi = dp[doc], dp[doc + 1]
        cur = dl[lo + draws[j] % (hi - lo)]
        j += 1
        visits[t] = cur
    return np.unique(visits, return_counts=True)


def walk_from(label: int, labels: sp.csr_matrix, cfg: WalkConfig, rng=None) -> sp.csr_matrix:
    """Visit counts of a restart walk started at ``label``, as a 1 x L row.

    ``rng`` defaults to the label's own substream of ``cfg.seed``, which is
    what the full graph construction uses.
    """
    adj = _Adjacency(labels)
    if rng is None:
        rng = substream(cfg.seed, STREAM_GRAPH, label)
    ids, counts = _walk_counts(adj, label, cfg, rng)
    return sp.csr_matrix(
        (counts.astype(np.float64), ids, np.array([0, ids.size])),
        shape=(1, adj.n_labels),
    )


def random_walk_graph(
    labels: sp.csr_matrix, cfg: WalkConfig, n_workers: int = 1
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Raw visit-count graph; row l holds the counts of the walk from l.

    Each label draws from its own counter-based substream, so the result is
    identical regardless of scheduling. Returns (counts, isolated labels).
    """
    adj = _Adjacency(labels)
    n = adj.n_labels

    def run(label: int):
        rng = substream(cfg.seed, STREAM_GRAPH, label)
        return _walk_counts(adj, label, cfg, rng)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(label) for label in range(n)]

    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([ids.size for ids, _ in results])
    indices = np.concatenate([ids for ids, _ in results]) if n else np.empty(0, np.int64)
    data = (
        np.concatenate([c for _, c in results]).astype(np.float64)
        if n
        else np.empty(0, np.float64)
    )
    counts = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    isolated = np.flatnonzero(np.diff(adj.label_ptr) == 0)
    return counts, isolated


def cooccurrence_graph(labels: sp.csr_matrix) -> sp.csr_matrix:
    """Label-label co-occurrence counts: entry (l, m) = #documents tagged with both."""
    binary = (labels != 0).astype(np.float64)
    return (binary.T @ binary).tocsr()


def partition_head_labels(
    counts: sp.csr_matrix, label_freq: np.ndarray, threshold: int
) -> sp.csr_matrix:
    """Disconnect labels with more than ``threshold`` training points.

    Each head row becomes a unit self-loop and all edges into a head column
    are removed. Idempotent.
    """
    heads = label_freq > threshold
    if not heads.any():
        return counts.tocsr()
    coo = counts.tocoo()
    keep = ~heads[coo.row] & ~heads[coo.col]
    head_ids = np.flatnonzero(heads)
    row = np.concatenate([coo.row[keep], head_ids])
    col = np.concatenate([coo.col[keep], head_ids])
    data = np.concatenate([coo.data[keep], np.ones(head_ids.size)])
    out = sp.csr_matrix((data, (row, col)), shape=counts.shape)
    out.sum_duplicates()
    return out


def normalize_graph(counts: sp.csr_matrix) -> sp.csr_matrix:
    """Rescale entry (l, m) by 1/sqrt(rowsum_l * colsum_m).

    Rows and columns with zero sum keep a zero scale factor (their entries
    are all zero anyway).
    """
    counts = counts.tocsr()
    rows = np.asarray(counts.sum(axis=1)).ravel()
    cols = np.asarray(counts.sum(axis=0)).ravel()
    rs = np.divide(1.0, np.sqrt(rows), out=np.zeros_like(rows), where=rows > 0)
    cs = np.divide(1.0, np.sqrt(cols), out=np.zeros_like(cols), where=cols > 0)
    out = counts.astype(np.float64).tocoo()
    out.data *= rs[out.row] * cs[out.col]
    return out.tocsr()


def induced_cluster_graph(g: sp.csr_matrix, assignment: sp.csr_matrix) -> sp.csr_matrix:
    """Project a label graph onto clusters: Mn^T G Mn with column-normalized Mn.

    ``assignment`` is the L x K one-hot matrix; columns are normalized to
    sum to one here, so passing an already-normalized matrix is harmless.
    An empty cluster yields a zero row and column.
    """
    m = assignment.tocsc().astype(np.float64)
    colsums = np.asarray(m.sum(axis=0)).ravel()
    scale = np.divide(1.0, colsums, out=np.zeros_like(colsums), where=colsums > 0)
    mn = (m @ sp.diags(scale)).tocsr()
    return (mn.T @ g @ mn).tocsr()


def build_label_graph(
    labels: sp.csr_matrix,
    cfg: WalkConfig,
    kind: str = "walk",
    n_workers: int = 1,
    max_row_entries: int | None = None,
) -> LabelGraph:
    """Full construction: counts -> head partition -> normalization.

    ``kind`` selects random-walk counts (default) or plain co-occurrence.
    ``max_row_entries`` optionally truncates each count row to its largest
    entries before partitioning; the default (None) keeps everything.
    """
    from .data import label_frequencies

    freq = label_frequencies(labels)
    if kind == "walk":
        counts, isolated = random_walk_graph(labels, cfg, n_workers=n_workers)
    elif kind == "cooc":
        counts = cooccurrence_graph(labels)
        isolated = np.flatnonzero(freq == 0)
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    if max_row_entries is not None:
        counts = _truncate_rows(counts, max_row_entries)
    if isolated.size:
        warnings.warn(f"{isolated.size} labels have no positive documents")
    partitioned = partition_head_labels(counts, freq, cfg.head_threshold)
    g = normalize_graph(partitioned)
    heads = np.flatnonzero(freq > cfg.head_threshold)
    return LabelGraph(g=g, g_raw=counts, head_labels=heads, isolated=isolated, config=cfg)


def identity_graph(n_labels: int) -> sp.csr_matrix:
    return sp.identity(n_labels, format="csr", dtype=np.float64)


def _truncate_rows(mat: sp.csr_matrix, k: int) -> sp.csr_matrix:
    mat = mat.tocsr()
    keep = np.zeros(mat.nnz, dtype=bool)
    for i in range(mat.shape[0]):
        lo, hi = mat.indptr[i], mat.indptr[i + 1]
        if hi - lo <= k:
            keep[lo:hi] = True
        else:
            vals = mat.data[lo:hi]
            # ties kept toward lower column ids for determinism
            order = np.lexsort((mat.indices[lo:hi], -vals))[:k]
            keep[lo + order] = True
    coo = mat.tocoo()
    return sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape
    )


def save_graph(path, matrix: sp.csr_matrix, cfg: WalkConfig) -> None:
    """Write a graph with its one-line metadata header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{cfg.walk_length} {cfg.restart_prob} {cfg.head_threshold} {cfg.seed}\n"
        )
        sparse_io.write_matrix(fh, matrix)


def load_graph(path) -> tuple[sp.csr_matrix, WalkConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise sparse_io.FormatError("graph file needs a metadata line and a header", 1)
    parts = lines[0].split()
    if len(parts) != 4:
        raise sparse_io.FormatError(
            f"expected metadata 'walk_length restart_prob head_threshold seed', got {lines[0]!r}", 1
        )
    cfg = WalkConfig(
        walk_length=int(parts[0]),
        restart_prob=float(parts[1]),
        head_threshold=int(parts[2]),
        seed=int(parts[3]),
    )
    dims = lines[1].split()
    if len(dims) != 2:
        raise sparse_io.FormatError(f"expected matrix header 'R C', got {lines[1]!r}", 2)
    mat = sparse_io.read_matrix_lines(
        lines[2:], (int(dims[0]), int(dims[1])), offset=3, dtype=np.float64
    )
    return mat, cfg

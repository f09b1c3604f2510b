"""Ranking metrics: precision, recall, propensity-scored precision,
popularity-bin decomposition, and clustering quality as mutual-information
loss."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .util import topk_desc


def top_ranked(scores: sp.csr_matrix, k: int) -> list[np.ndarray]:
    """Per-row label ids of the k best scores, ties to the lower label id.

    Rows with fewer than k scored labels yield shorter arrays.
    """
    scores = scores.tocsr()
    out = []
    for i in range(scores.shape[0]):
        lo, hi = scores.indptr[i], scores.indptr[i + 1]
        cols = scores.indices[lo:hi]
        vals = scores.data[lo:hi]
        order = topk_desc(vals, k)
        out.append(cols[order].astype(np.int64))
    return out


def _positives(truth: sp.csr_matrix, i: int) -> np.ndarray:
    return truth.indices[truth.indptr[i] : truth.indptr[i + 1]]


def precision_at_k(scores: sp.csr_matrix, truth: sp.csr_matrix, k: int) -> float:
    """Mean over points of |top-k that are relevant| / k."""
    ranked = top_ranked(scores, k)
    truth = truth.tocsr()
    total = 0.0
    for i, top in enumerate(ranked):
        total += np.isin(top, _positives(truth, i)).sum() / k
    return total / max(truth.shape[0], 1)


def recall_at_k(scores: sp.csr_matrix, truth: sp.csr_matrix, k: int) -> float:
    """Mean over points with positives of the covered fraction at k."""
    ranked = top_ranked(scores, k)
    truth = truth.tocsr()
    total = 0.0
    counted = 0
    for i, top in enumerate(ranked):
        pos = _positives(truth, i)
        if pos.size == 0:
            continue
        counted += 1
        total += np.isin(top, pos).sum() / pos.size
    return total / counted if counted else 0.0


def propensity(label_freq: np.ndarray, n_train: int, a: float = 0.55, b: float = 1.5) -> np.ndarray:
    """Per-label positive propensity under the standard power-law model.

    p_l = 1 / (1 + C * (N_l + b)^(-a)) with C = (ln N - 1) * (b + 1)^a;
    rarer labels get lower propensity, hence higher inverse weight.
    """
    c = (np.log(n_train) - 1.0) * (b + 1.0) ** a
    return 1.0 / (1.0 + c * np.exp(-a * np.log(label_freq + b)))


def psp_at_k(
    scores: sp.csr_matrix,
    truth: sp.csr_matrix,
    label_freq: np.ndarray,
    n_train: int,
    k: int,
    a: float = 0.55,
    b: float = 1.5,
) -> float:
    """Propensity-scored precision at k, normalized by the best achievable.

    Both the prediction's inverse-propensity-weighted hit mass and the
    maximal mass (predicting the k rarest positives) are summed over the
    test set; the metric is their ratio, so a perfect ranker scores 1.
    """
    inv = 1.0 / propensity(label_freq, n_train, a, b)
    ranked = top_ranked(scores, k)
    truth = truth.tocsr()
    num = 0.0
    den = 0.0
    for i, top in enumerate(ranked):
        pos = _positives(truth, i)
        if pos.size:
            best = np.sort(inv[pos])[::-1]
            den += best[: min(k, pos.size)].sum()
        hits = top[np.isin(top, pos)]
        num += inv[hits].sum()
    return num / den if den > 0 else 0.0


def popularity_bins(label_freq: np.ndarray, n_bins: int = 5) -> np.ndarray:
    """Assign labels to popularity bins with equal cumulative positives.

    Labels are ordered by ascending training frequency (ties by id) and cut
    where the running positive count crosses each equal share of the total.
    Returns the bin id per label, 0 = rarest bin.
    """
    order = np.lexsort((np.arange(label_freq.size), label_freq))
    total = float(label_freq.sum())
    bins = np.zeros(label_freq.size, dtype=np.int64)
    if total == 0:
        return bins
    running = 0.0
    current = 0
    for l in order:
        if current < n_bins - 1 and running >= (current + 1) * total / n_bins:
            current += 1
        bins[l] = current
        running += label_freq[l]
    return bins


def bin_contributions(
    scores: sp.csr_matrix,
    truth: sp.csr_matrix,
    label_freq: np.ndarray,
    k: int,
    n_bins: int = 5,
) -> np.ndarray:
    """Additive decomposition of P@k by label-popularity bin.

    Entry b is the share of precision earned by hits on bin-b labels; the
    entries sum to the overall P@k.
    """
    bins = popularity_bins(label_freq, n_bins)
    ranked = top_ranked(scores, k)
    truth = truth.tocsr()
    out = np.zeros(n_bins)
    n = max(truth.shape[0], 1)
    for i, top in enumerate(ranked):
        hits = top[np.isin(top, _positives(truth, i))]
        for b in bins[hits]:
            out[b] += 1.0 / (k * n)
    return out


def mutual_information_loss(label_to_cluster: np.ndarray, truth: sp.csr_matrix) -> float:
    """Information (in bits) about documents lost by pooling labels into clusters.

    Under the empirical joint distribution that puts equal mass on every
    positive (document, label) pair, this is I(document; label) minus
    I(document; cluster); collapsing nothing (singleton clusters) loses 0
    and collapsing everything loses all of I(document; label).
    """
    truth = (truth.tocsr() != 0).astype(np.float64)
    total = truth.nnz
    if total == 0:
        return 0.0

    def mi(joint: sp.csr_matrix) -> float:
        joint = joint.tocoo()
        row_mass = np.asarray(joint.sum(axis=1)).ravel() / total
        col_mass = np.asarray(joint.sum(axis=0)).ravel() / total
        p = joint.data / total
        return float(
            np.sum(p * np.log2(p / (row_mass[joint.row] * col_mass[joint.col])))
        )

    n_clusters = int(label_to_cluster.max()) + 1
    m = sp.csr_matrix(
        (
            np.ones(label_to_cluster.size),
            (np.arange(label_to_cluster.size), label_to_cluster),
        ),
        shape=(label_to_cluster.size, n_clusters),
    )
    return mi(truth) - mi(truth @ m)


def metrics_report(
    scores: sp.csr_matrix,
    truth: sp.csr_matrix,
    label_freq: np.ndarray,
    n_train: int,
    ks: list[int],
    a: float = 0.55,
    b: float = 1.5,
) -> list[tuple[str, int, float]]:
    """(metric, k, value) rows for the standard report."""
    rows = []
    for k in ks:
        rows.append(("P", k, precision_at_k(scores, truth, k)))
    for k in ks:
        rows.append(("PSP", k, psp_at_k(scores, truth, label_freq, n_train, k, a, b)))
    for k in ks:
        rows.append(("R", k, recall_at_k(scores, truth, k)))
    return rows


def write_report(path, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for metric, k, value in rows:
            fh.write(f"{metric} {k} {value:.6f}\n")

"""Dataset container, loading/saving, statistics, and TF-IDF weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse_io import (
    FormatError,
    read_labeled_matrix,
    read_matrix,
    write_labeled_matrix,
    write_matrix,
)


@dataclass(frozen=True)
class XcDataset:
    """A multi-label text dataset in bag-of-tokens form.

    Attributes:
        docs: N x V token weights per document.
        labels: N x L binary relevance matrix (1 = relevant).
        label_text: L x V token weights for each label's own text.
    """

    docs: sp.csr_matrix
    labels: sp.csr_matrix
    label_text: sp.csr_matrix

    @property
    def n_docs(self) -> int:
        return self.docs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.docs.shape[1]

    def validate(self) -> "XcDataset":
        if self.docs.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"documents ({self.docs.shape[0]}) and label rows "
                f"({self.labels.shape[0]}) disagree"
            )
        if self.label_text.shape[0] != self.labels.shape[1]:
            raise FormatError(
                f"label-text file has {self.label_text.shape[0]} rows but the "
                f"dataset declares {self.labels.shape[1]} labels"
            )
        if self.label_text.shape[1] != self.docs.shape[1]:
            raise FormatError(
                f"label-text vocabulary ({self.label_text.shape[1]}) differs "
                f"from document vocabulary ({self.docs.shape[1]})"
            )
        if self.docs.nnz and self.docs.data.min() < 0:
            raise FormatError("document token weights must be nonnegative")
        return self


@dataclass(frozen=True)
class DatasetStats:
    n_docs: int
    n_labels: int
    vocab_size: int
    avg_labels_per_doc: float
    avg_points_per_label: float
    avg_tokens_per_doc: float
    avg_tokens_per_label: float
    label_frequency: np.ndarray  # training points per label, shape (L,)


def load_dataset(doc_path, label_text_path) -> XcDataset:
    """Load a dataset from its document file and label-text file."""
    docs, labels = read_labeled_matrix(doc_path)
    label_text = read_matrix(label_text_path)
    return XcDataset(docs=docs, labels=labels, label_text=label_text).validate()


def save_dataset(ds: XcDataset, doc_path, label_text_path) -> None:
    write_labeled_matrix(doc_path, ds.docs, ds.labels)
    write_matrix(label_text_path, ds.label_text)


def label_frequencies(labels: sp.csr_matrix) -> np.ndarray:
    """Number of training points per label (column sums of the truth matrix)."""
    return np.asarray((labels != 0).sum(axis=0)).ravel().astype(np.int64)


def compute_stats(ds: XcDataset) -> DatasetStats:
    freq = label_frequencies(ds.labels)
    n = max(ds.n_docs, 1)
    l = max(ds.n_labels, 1)
    return DatasetStats(
        n_docs=ds.n_docs,
        n_labels=ds.n_labels,
        vocab_size=ds.vocab_size,
        avg_labels_per_doc=float(ds.labels.nnz) / n,
        avg_points_per_label=float(ds.labels.nnz) / l,
        avg_tokens_per_doc=float(ds.docs.nnz) / n,
        avg_tokens_per_label=float(ds.label_text.nnz) / l,
        label_frequency=freq,
    )


def fit_idf(docs: sp.csr_matrix) -> np.ndarray:
    """Smoothed inverse document frequency: ln((N + 1) / (df + 1)) + 1."""
    df = np.asarray((docs != 0).sum(axis=0)).ravel().astype(np.float64)
    return np.log((docs.shape[0] + 1.0) / (df + 1.0)) + 1.0


def apply_tfidf(mat: sp.csr_matrix, idf: np.ndarray) -> sp.csr_matrix:
    """Rescale raw counts by IDF and L2-normalize each row.

    Zero rows stay zero. Accumulation is in float64; the result is stored
    in float32 like all loaded matrices.
    """
    out = (mat.astype(np.float64) @ sp.diags(idf)).tocsr()
    norms = np.sqrt(np.asarray(out.multiply(out).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    out = sp.diags(scale) @ out
    return sp.csr_matrix(out, dtype=np.float32)


def tfidf_normalize(docs: sp.csr_matrix) -> sp.csr_matrix:
    """TF-IDF weight a raw count matrix against its own corpus statistics."""
    return apply_tfidf(docs, fit_idf(docs))


def tfidf_dataset(ds: XcDataset) -> XcDataset:
    """TF-IDF weight documents and label text with the document-corpus IDF.

    Documents and labels share a vocabulary, so label text reuses the IDF
    fitted on documents.
    """
    idf = fit_idf(ds.docs)
    return XcDataset(
        docs=apply_tfidf(ds.docs, idf),
        labels=ds.labels,
        label_text=apply_tfidf(ds.label_text, idf),
    )

"""Scikit-learn style front end for the full training and prediction pipeline."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .data import XcDataset, label_frequencies
from .graph import WalkConfig
from .train import TrainConfig, ensure_graph, run_pipeline
from .validation import check_binary_labels, check_sparse_rows


class GraphXCClassifier(BaseEstimator):
    """Extreme multi-label classifier with label-correlation graphs.

    ``fit`` takes the document matrix, the multilabel indicator matrix, and
    a bag-of-tokens matrix for each label's own text (same vocabulary as
    the documents). ``predict`` returns the top-k joint scores per sample
    as a sparse matrix; ``predict_topk`` returns ranked id/score arrays.

    Parameters mirror the training configuration; see ``TrainConfig``.
    """

    def __init__(
        self,
        embed_dim: int = 64,
        n_clusters: int = 16,
        beam_size: int = 4,
        conv_order: int = 1,
        dropout: float = 0.2,
        batch_size: int = 255,
        epochs_embed: int = 20,
        epochs_shortlist: int = 10,
        epochs_rank: int = 10,
        lr_embed: float = 0.01,
        lr_rank: float = 0.008,
        lr_decay: float = 0.5,
        decay_interval: float = 0.5,
        walk_length: int = 400,
        restart_prob: float = 0.8,
        head_threshold: int = 500,
        graph_kind: str = "walk",
        fusion: str = "attention",
        use_text: bool = True,
        use_refine: bool = True,
        graph_in_training: bool = True,
        topk: int = 5,
        dtype: str = "float32",
        seed: int = 0,
        n_workers: int = 1,
    ):
        self.embed_dim = embed_dim
        self.n_clusters = n_clusters
        self.beam_size = beam_size
        self.conv_order = conv_order
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs_embed = epochs_embed
        self.epochs_shortlist = epochs_shortlist
        self.epochs_rank = epochs_rank
        self.lr_embed = lr_embed
        self.lr_rank = lr_rank
        self.lr_decay = lr_decay
        self.decay_interval = decay_interval
        self.walk_length = walk_length
        self.restart_prob = restart_prob
        self.head_threshold = head_threshold
        self.graph_kind = graph_kind
        self.fusion = fusion
        self.use_text = use_text
        self.use_refine = use_refine
        self.graph_in_training = graph_in_training
        self.topk = topk
        self.dtype = dtype
        self.seed = seed
        self.n_workers = n_workers

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            embed_dim=self.embed_dim,
            n_clusters=self.n_clusters,
            beam_size=self.beam_size,
            conv_order=self.conv_order,
            dropout=self.dropout,
            batch_size=self.batch_size,
            epochs_embed=self.epochs_embed,
            epochs_shortlist=self.epochs_shortlist,
            epochs_rank=self.epochs_rank,
            lr_embed=self.lr_embed,
            lr_rank=self.lr_rank,
            lr_decay=self.lr_decay,
            decay_interval=self.decay_interval,
            walk=WalkConfig(
                walk_length=self.walk_length,
                restart_prob=self.restart_prob,
                head_threshold=self.head_threshold,
                seed=self.seed,
            ),
            seed=self.seed,
            dtype=self.dtype,
            graph_kind=self.graph_kind,
            fusion=self.fusion,
            use_text=self.use_text,
            use_refine=self.use_refine,
            graph_in_training=self.graph_in_training,
            topk=self.topk,
            n_workers=self.n_workers,
        ).validate()

    def fit(self, X, y, label_text=None):
        """Train on documents ``X`` (n x V), labels ``y`` (n x L), and label text (L x V)."""
        X = check_sparse_rows(X, name="X")
        y = check_binary_labels(y, X.shape[0], name="y")
        if label_text is None:
            raise ValueError(
                "label_text is required: pass an L x V bag-of-tokens matrix "
                "for the labels' own descriptions"
            )
        label_text = check_sparse_rows(label_text, n_cols=X.shape[1], name="label_text")
        if label_text.shape[0] != y.shape[1]:
            raise ValueError(
                f"label_text has {label_text.shape[0]} rows but y declares "
                f"{y.shape[1]} labels"
            )
        ds = XcDataset(docs=X, labels=y, label_text=label_text).validate()
        cfg = self._train_config()
        graph = ensure_graph(ds, cfg)
        state, predictor = run_pipeline(ds, cfg, graph=graph)
        self.predictor_ = predictor
        self.state_ = state
        self.graph_ = graph
        self.n_features_in_ = X.shape[1]
        self.n_labels_ = y.shape[1]
        self.label_frequency_ = label_frequencies(y)
        return self

    def _check_fitted(self):
        if not hasattr(self, "predictor_"):
            raise RuntimeError("this estimator is not fitted yet; call fit first")

    def decision_function(self, X, k: int | None = None) -> sp.csr_matrix:
        """Joint scores of the top-k labels per sample (CSR, zeros elsewhere)."""
        self._check_fitted()
        X = check_sparse_rows(X, n_cols=self.n_features_in_, name="X")
        return self.predictor_.predict(X, k=k or self.topk)

    def predict(self, X) -> sp.csr_matrix:
        """Binary indicator matrix of the top-k predicted labels."""
        scores = self.decision_function(X)
        out = scores.copy()
        out.data = np.ones_like(out.data)
        return out

    def predict_topk(self, X, k: int | None = None):
        """(ids, scores) arrays of shape (n, k), ranked best first; -1 pads."""
        scores = self.decision_function(X, k=k)
        k = k or self.topk
        n = scores.shape[0]
        ids = np.full((n, k), -1, dtype=np.int64)
        vals = np.zeros((n, k), dtype=scores.dtype)
        for i in range(n):
            lo, hi = scores.indptr[i], scores.indptr[i + 1]
            order = np.argsort(-scores.data[lo:hi], kind="stable")
            m = hi - lo
            ids[i, :m] = scores.indices[lo:hi][order]
            vals[i, :m] = scores.data[lo:hi][order]
        return ids, vals

    def score(self, X, y) -> float:
        """Precision at 1 on the given data."""
        from .metrics import precision_at_k

        y = check_binary_labels(y, X.shape[0] if not sp.issparse(X) else X.shape[0])
        return precision_at_k(self.decision_function(X, k=1), y, 1)

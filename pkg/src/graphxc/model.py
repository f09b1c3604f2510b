"""The scoring architecture.

A document is embedded as ReLU(block(E @ x)). Each label gets up to
``order + 2`` component vectors in the same space:

* a text component: block(E @ z_l),
* one graph component per convolution order: block_k(G^k row l @ E Z),
* a free per-label refinement vector.

The components are fused (attention or plain mean) into one classifier
vector per label; relevance is the inner product with the document
embedding. The same stack is reused for the meta-label problem inside the
shortlister, just with cluster-level text and the cluster graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .ops import (
    EVAL,
    AttentionFusion,
    EmbeddingBlock,
    Param,
    TrainContext,
    fuse_sum,
    fuse_sum_backward,
    relu,
)


@dataclass
class ComponentConfig:
    """Which classifier components exist and how they are fused."""

    order: int = 1            # number of graph-convolution components
    use_text: bool = True
    use_refine: bool = True
    fusion: str = "attention"  # or "sum"

    @property
    def n_components(self) -> int:
        return self.order + int(self.use_text) + int(self.use_refine)

    def validate(self) -> "ComponentConfig":
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.n_components < 1:
            raise ValueError("at least one classifier component must be enabled")
        if self.fusion not in ("attention", "sum"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        return self


@dataclass
class LabelStack:
    """Blocks, fusion, and refinement table for one label space."""

    text_block: EmbeddingBlock | None
    graph_blocks: list[EmbeddingBlock]
    attention: AttentionFusion | None     # None means mean fusion
    refine: Param | None                  # (L, D) rows
    config: ComponentConfig

    @staticmethod
    def create(
        dim: int,
        n_labels: int,
        cfg: ComponentConfig,
        rng: np.random.Generator,
        refine_init: np.ndarray | None = None,
        dtype=np.float32,
    ) -> "LabelStack":
        cfg.validate()
        refine = None
        if cfg.use_refine:
            init = (
                np.zeros((n_labels, dim), dtype=dtype)
                if refine_init is None
                else np.asarray(refine_init, dtype=dtype)
            )
            refine = Param(init)
        attention = (
            AttentionFusion.init(dim, cfg.n_components, rng, dtype=dtype)
            if cfg.fusion == "attention"
            else None
        )
        return LabelStack(
            text_block=EmbeddingBlock.identity(dim, dtype) if cfg.use_text else None,
            graph_blocks=[EmbeddingBlock.identity(dim, dtype) for _ in range(cfg.order)],
            attention=attention,
            refine=refine,
            config=cfg,
        )

    def params(self, prefix: str = "labels") -> dict[str, Param]:
        out: dict[str, Param] = {}
        if self.text_block is not None:
            out.update(self.text_block.params(f"{prefix}.text"))
        for k, blk in enumerate(self.graph_blocks):
            out.update(blk.params(f"{prefix}.graph{k}"))
        if self.attention is not None:
            out.update(self.attention.params(f"{prefix}.attention"))
        if self.refine is not None:
            out[f"{prefix}.refine"] = self.refine
        return out

    def spectral_matrices(self, prefix: str = "labels") -> dict[str, Param]:
        """The weight matrices subject to spectral regularization."""
        out: dict[str, Param] = {}
        if self.text_block is not None:
            out[f"{prefix}.text.weight"] = self.text_block.weight
        for k, blk in enumerate(self.graph_blocks):
            out[f"{prefix}.graph{k}.weight"] = blk.weight
        if self.attention is not None:
            out[f"{prefix}.attention.transform"] = self.attention.transform
        return out

    # -- forward / backward over a batch of label ids ----------------------

    def forward(
        self,
        label_ids: np.ndarray,
        text_in: np.ndarray | None,
        graph_in: list[np.ndarray],
        ctx: TrainContext = EVAL,
    ):
        """Classifier vectors for ``label_ids``.

        ``text_in`` is the (m, D) matrix of embedded label text for exactly
        these labels; ``graph_in`` holds one (m, D) matrix per convolution
        order. Returns (W (m, D), attention weights or None, cache).
        """
        comps = []
        caches = []
        if self.text_block is not None:
            out, cache = self.text_block.forward(text_in, ctx)
            comps.append(out)
            caches.append(cache)
        for blk, g_in in zip(self.graph_blocks, graph_in):
            out, cache = blk.forward(g_in, ctx)
            comps.append(out)
            caches.append(cache)
        if self.refine is not None:
            comps.append(self.refine.value[label_ids])
        stacked = np.stack(comps, axis=0)
        if self.attention is not None:
            w, alpha, fuse_cache = self.attention.forward(stacked, ctx)
        else:
            w, fuse_cache = fuse_sum(stacked)
            alpha = None
        return w, alpha, (label_ids, caches, fuse_cache)

    def backward(self, dw: np.ndarray, cache):
        """Accumulate gradients; returns (d_text_in, d_graph_in list)."""
        label_ids, caches, fuse_cache = cache
        if self.attention is not None:
            dcomps = self.attention.backward(dw, fuse_cache)
        else:
            dcomps = fuse_sum_backward(dw, fuse_cache)
        i = 0
        d_text = None
        if self.text_block is not None:
            d_text = self.text_block.backward(dcomps[i], caches[i])
            i += 1
        d_graph = []
        for k, blk in enumerate(self.graph_blocks):
            d_graph.append(blk.backward(dcomps[i], caches[i]))
            i += 1
        if self.refine is not None:
            np.add.at(self.refine.g, label_ids, dcomps[i])
        return d_text, d_graph


@dataclass
class DocumentEncoder:
    """Token embedding table plus the document residual block."""

    embeddings: Param  # (D, V)
    block: EmbeddingBlock

    @staticmethod
    def create(dim: int, vocab: int, rng: np.random.Generator, dtype=np.float32):
        scale = np.sqrt(2.0 / vocab)
        return DocumentEncoder(
            embeddings=Param((rng.standard_normal((dim, vocab)) * scale).astype(dtype)),
            block=EmbeddingBlock.identity(dim, dtype),
        )

    @property
    def dim(self) -> int:
        return self.embeddings.value.shape[0]

    def forward(self, docs: sp.csr_matrix, ctx: TrainContext = EVAL):
        """Embed a CSR batch of documents; returns (X_hat (n, D), cache)."""
        x0 = docs @ self.embeddings.value.T
        h, block_cache = self.block.forward(x0, ctx)
        out = relu(h)
        mask = ctx.mask(out.shape, out.dtype.type)
        if mask is not None:
            out = out * mask
        return out, (docs, h, mask, block_cache)

    def backward(self, dout: np.ndarray, cache, train_embeddings: bool = True):
        docs, h, mask, block_cache = cache
        if mask is not None:
            dout = dout * mask
        dh = dout * (h > 0)
        dx0 = self.block.backward(dh, block_cache)
        if train_embeddings:
            self.embeddings.g += (docs.T @ dx0).T
        return dx0

    def params(self, prefix: str = "docs", include_embeddings: bool = True):
        out = self.block.params(f"{prefix}.block")
        if include_embeddings:
            out["token_embeddings"] = self.embeddings
        return out


def embed_tokens(rows: sp.csr_matrix, embeddings: np.ndarray) -> np.ndarray:
    """Initial representation of bag-of-token rows: rows @ E^T."""
    return rows @ embeddings.T


def graph_convolved_inputs(
    g: sp.csr_matrix, z0: np.ndarray, order: int
) -> list[np.ndarray]:
    """[G @ Z0, G^2 @ Z0, ...] up to the requested order."""
    out = []
    cur = z0
    for _ in range(order):
        cur = g @ cur
        out.append(cur)
    return out


def materialize_classifiers(
    stack: LabelStack,
    text_in: np.ndarray | None,
    graph_in: list[np.ndarray],
    batch: int = 8192,
) -> np.ndarray:
    """Evaluation-mode classifier matrix W (L, D) built in chunks."""
    n = (
        stack.refine.value.shape[0]
        if stack.refine is not None
        else (text_in.shape[0] if text_in is not None else graph_in[0].shape[0])
    )
    dim = text_in.shape[1] if text_in is not None else graph_in[0].shape[1]
    dtype = text_in.dtype if text_in is not None else graph_in[0].dtype
    w = np.empty((n, dim), dtype=dtype)
    for lo in range(0, n, batch):
        hi = min(lo + batch, n)
        ids = np.arange(lo, hi)
        w[lo:hi], _, _ = stack.forward(
            ids,
            None if text_in is None else text_in[lo:hi],
            [g[lo:hi] for g in graph_in],
            EVAL,
        )
    return w


# -- single-instance helpers (used by tests and one-off scoring) ------------


def embed_document(x: sp.csr_matrix, encoder: DocumentEncoder) -> np.ndarray:
    out, _ = encoder.forward(x, EVAL)
    return out[0] if out.shape[0] == 1 else out


def text_embedding(z: sp.csr_matrix, embeddings: np.ndarray, block: EmbeddingBlock) -> np.ndarray:
    """Label-text component for a single label row (no trailing ReLU)."""
    out, _ = block.forward(embed_tokens(z, embeddings), EVAL)
    return out[0]


def graph_embedding(
    label: int,
    g: sp.csr_matrix,
    z0: np.ndarray,
    block: EmbeddingBlock,
    order: int = 1,
) -> np.ndarray:
    """Graph-convolved component of one label at the given order."""
    row = sp.identity(g.shape[0], format="csr", dtype=g.dtype)[label]
    for _ in range(order):
        row = row @ g
    out, _ = block.forward(row @ z0, EVAL)
    return out[0]


def fuse_classifier(stack: LabelStack, label: int, text_in, graph_in):
    """Classifier vector and attention weights for one label."""
    w, alpha, _ = stack.forward(
        np.array([label]),
        None if text_in is None else np.atleast_2d(text_in),
        [np.atleast_2d(g) for g in graph_in],
        EVAL,
    )
    return w[0], (None if alpha is None else alpha[0])


def score(x_hat: np.ndarray, w: np.ndarray) -> float:
    """Raw relevance logit; callers apply the sigmoid when they need one."""
    return float(np.dot(x_hat, w))

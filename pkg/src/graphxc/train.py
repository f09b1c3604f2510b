"""The four-stage training schedule.

Stage 1 learns token embeddings by solving a small cluster-level (meta)
problem: labels are clustered on graph-smoothed raw-text centroids, each
cluster becomes a meta-label whose text is the sum of its members' text,
and cluster classifiers (text + graph components, no refinement) are
trained against every cluster with binary cross entropy.

Stage 2 freezes the token embeddings, re-clusters on embedded centroids,
re-solves the meta problem with refinement vectors enabled, materializes
the cluster classifiers, and extracts a GAME shortlist for every training
point.

Stage 3 re-initializes the residual blocks to identity, draws fresh
attention parameters, and seeds each label's refinement vector with the
graph-smoothed embedding of its neighbors' text.

Stage 4 trains the full per-label classifiers with BCE restricted to each
point's positives and shortlisted negatives.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cluster import assignment_matrix, cluster_labels, graph_centroids
from .data import XcDataset, label_frequencies
from .graph import LabelGraph, WalkConfig, build_label_graph, induced_cluster_graph
from .model import (
    ComponentConfig,
    DocumentEncoder,
    EmbeddingBlock,
    LabelStack,
    embed_tokens,
    graph_convolved_inputs,
    materialize_classifiers,
)
from .ops import Adam, EVAL, NumericError, Param, SpectralNorm, TrainContext, bce_with_logits
from .shortlist import Shortlister, train_shortlists
from .util import STREAM_STAGE, substream


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 64
    n_clusters: int = 64
    beam_size: int = 8
    conv_order: int = 1
    dropout: float = 0.2
    batch_size: int = 255
    epochs_embed: int = 20
    epochs_shortlist: int = 10
    epochs_rank: int = 10
    lr_embed: float = 0.01
    lr_rank: float = 0.008
    lr_decay: float = 0.5
    decay_interval: float = 0.5  # epochs between learning-rate decays
    attention_lr_scale: float = 1.0  # per-group factor for fusion parameters;
    # small desk-scale runs need hot refinement rates that would saturate the
    # fusion softmax if applied to it directly
    walk: WalkConfig = field(default_factory=WalkConfig)
    seed: int = 0
    dtype: str = "float32"
    graph_kind: str = "walk"      # "walk" or "cooc"
    fusion: str = "attention"     # "attention" or "sum"
    use_text: bool = True         # label-text component in the final classifiers
    use_refine: bool = True       # refinement component in the final classifiers
    graph_in_training: bool = True  # turn off to replace the correlation
    # graph with the identity everywhere: centroid smoothing, the label
    # convolution components, GAME re-ranking, refinement initialization,
    # and prediction-time expansion
    topk: int = 5
    n_workers: int = 1

    def validate(self) -> "TrainConfig":
        if self.embed_dim < 1 or self.n_clusters < 1 or self.batch_size < 1:
            raise ValueError("embed_dim, n_clusters and batch_size must be positive")
        if not 1 <= self.beam_size <= self.n_clusters:
            raise ValueError("beam_size must lie in [1, n_clusters]")
        if self.conv_order < 1:
            raise ValueError("conv_order must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.epochs_embed, self.epochs_shortlist, self.epochs_rank) < 0:
            raise ValueError("epoch counts must be nonnegative")
        if min(self.lr_embed, self.lr_rank) <= 0 or self.decay_interval <= 0:
            raise ValueError("learning rates and decay_interval must be positive")
        if self.attention_lr_scale <= 0:
            raise ValueError("attention_lr_scale must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.graph_kind not in ("walk", "cooc"):
            raise ValueError("graph_kind must be walk or cooc")
        ComponentConfig(
            order=self.conv_order,
            use_text=self.use_text,
            use_refine=self.use_refine,
            fusion=self.fusion,
        ).validate()
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class MetaProblem:
    """The cluster-level classification problem solved in stages 1 and 2."""

    clusters: list[np.ndarray]
    assignment: sp.csr_matrix       # L x K binary
    cluster_graph: sp.csr_matrix    # K x K induced graph (drives meta convolution)
    meta_text: sp.csr_matrix        # K x V summed member text
    targets: sp.csr_matrix          # N x K binary meta ground truth


@dataclass
class TrainLog:
    lines: list[str] = field(default_factory=list)
    epoch_loss: dict[str, list[float]] = field(default_factory=dict)
    grad_norms: dict[str, list[float]] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def record(self, epoch: int, step: int, loss: float, lr: float) -> None:
        self.lines.append(f"{epoch} {step} {loss:.6f} {lr:.8f}")

    def section(self, name: str) -> None:
        self.lines.append(f"# {name}")


@dataclass
class PipelineState:
    config: TrainConfig
    graph: LabelGraph
    encoder: DocumentEncoder | None = None
    meta_stack: LabelStack | None = None
    meta_problem: MetaProblem | None = None
    shortlister: Shortlister | None = None
    shortlists: list[np.ndarray] | None = None
    ranker: LabelStack | None = None
    log: TrainLog = field(default_factory=TrainLog)


def ensure_graph(ds: XcDataset, cfg: TrainConfig) -> LabelGraph:
    return build_label_graph(
        ds.labels, cfg.walk, kind=cfg.graph_kind, n_workers=cfg.n_workers
    )


def _conv_graph(cfg: TrainConfig, graph: LabelGraph) -> sp.csr_matrix:
    """The matrix used for label convolutions (identity when ablated)."""
    from .graph import identity_graph

    return graph.g if cfg.graph_in_training else identity_graph(graph.g.shape[0])


def build_meta_problem(
    ds: XcDataset, graph: LabelGraph, features, cfg: TrainConfig, salt: int
) -> MetaProblem:
    """Cluster labels on (optionally graph-smoothed) centroids of ``features``."""
    freq = label_frequencies(ds.labels)
    smoothing = graph.g if cfg.graph_in_training else None
    centroids = graph_centroids(features, ds.labels, smoothing)
    clusters = cluster_labels(
        centroids,
        cfg.n_clusters,
        label_freq=freq,
        head_threshold=cfg.walk.head_threshold,
        seed=cfg.seed,
        salt=salt,
    )
    assignment = assignment_matrix(clusters, ds.n_labels)
    cluster_graph = induced_cluster_graph(_conv_graph(cfg, graph), assignment)
    meta_text = sp.csr_matrix(assignment.T @ ds.label_text)
    targets = sp.csr_matrix((ds.labels @ assignment) != 0, dtype=np.int8)
    return MetaProblem(
        clusters=clusters,
        assignment=assignment,
        cluster_graph=cluster_graph,
        meta_text=meta_text,
        targets=targets,
    )


def _graph_powers(g: sp.csr_matrix, order: int) -> list[sp.csr_matrix]:
    out = []
    cur = g
    for _ in range(order):
        out.append(cur)
        cur = (cur @ g).tocsr()
    return out


def _decay_every(n_points: int, cfg: TrainConfig) -> int:
    steps_per_epoch = max(1, int(np.ceil(n_points / cfg.batch_size)))
    return max(1, int(np.ceil(cfg.decay_interval * steps_per_epoch)))


def _check_finite(loss: float) -> float:
    if not np.isfinite(loss):
        raise NumericError(f"training loss became non-finite ({loss})")
    return loss


def _spectral_states(matrices: dict[str, Param], rng, dtype) -> dict[str, SpectralNorm]:
    return {
        name: SpectralNorm(p.value.shape[0], rng, dtype=dtype)
        for name, p in matrices.items()
    }


def _scale_attention_lr(opt: Adam, cfg: TrainConfig) -> None:
    for name in opt.params:
        if ".attention." in name:
            opt.lr_scale[name] = cfg.attention_lr_scale


def _train_meta(
    ds: XcDataset,
    encoder: DocumentEncoder,
    stack: LabelStack,
    meta: MetaProblem,
    cfg: TrainConfig,
    epochs: int,
    lr: float,
    train_embeddings: bool,
    rng: np.random.Generator,
    log: TrainLog,
    stage: str,
) -> None:
    """Shared training loop for the cluster-level problem (stages 1 and 2)."""
    n, k = meta.targets.shape
    dtype = cfg.np_dtype
    params = dict(stack.params("meta"))
    params.update(encoder.params("docs", include_embeddings=train_embeddings))
    opt = Adam(params, lr)
    _scale_attention_lr(opt, cfg)
    spectral = dict(stack.spectral_matrices("meta"))
    spectral["docs.block.weight"] = encoder.block.weight
    spec_states = _spectral_states(spectral, rng, dtype)
    gm_pows = _graph_powers(meta.cluster_graph, stack.config.order)
    meta_text_t = meta.meta_text.T.tocsr()
    decay_every = _decay_every(n, cfg)
    all_ids = np.arange(k)
    targets_dense = np.asarray(meta.targets.todense(), dtype=dtype) * 2 - 1
    step = 0
    u0_frozen = (
        embed_tokens(meta.meta_text, encoder.embeddings.value).astype(dtype)
        if not train_embeddings
        else None
    )
    conv_frozen = (
        [np.asarray(g @ u0_frozen, dtype=dtype) for g in gm_pows]
        if u0_frozen is not None
        else None
    )
    log.section(f"stage {stage}")
    losses = log.epoch_loss.setdefault(stage, [])
    norms = log.grad_norms.setdefault(stage, [])
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        epoch_gnorm = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            ctx = TrainContext(training=True, dropout=cfg.dropout, rng=rng)
            x_hat, doc_cache = encoder.forward(ds.docs[idx], ctx)
            if train_embeddings:
                u0 = embed_tokens(meta.meta_text, encoder.embeddings.value)
                convs = [np.asarray(g @ u0) for g in gm_pows]
            else:
                u0, convs = u0_frozen, conv_frozen
            h, _, cache = stack.forward(all_ids, u0 if stack.text_block is not None else None, convs, ctx)
            scores = x_hat @ h.T
            loss, dscores = bce_with_logits(scores, targets_dense[idx])
            _check_finite(loss)
            dh = dscores.T @ x_hat
            dx_hat = dscores @ h
            d_text, d_graph = stack.backward(dh, cache)
            if train_embeddings:
                du0 = np.zeros_like(u0)
                if d_text is not None:
                    du0 += d_text
                for g, dg in zip(gm_pows, d_graph):
                    du0 += g.T @ dg
                encoder.embeddings.g += (meta_text_t @ du0).T
            encoder.backward(dx_hat, doc_cache, train_embeddings=train_embeddings)
            epoch_gnorm += sum(
                float(np.linalg.norm(p.grad)) for p in params.values() if p.grad is not None
            )
            opt.step()
            opt.zero_grad()
            for name, state in spec_states.items():
                state.apply(spectral[name].value)
            step += 1
            if step % decay_every == 0:
                opt.decay(cfg.lr_decay)
            log.record(epoch, step, loss, opt.lr)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
        norms.append(epoch_gnorm / max(1, len(epoch_losses)))


def train_token_embeddings(ds: XcDataset, graph: LabelGraph, cfg: TrainConfig) -> PipelineState:
    """Stage 1: token embeddings and the first meta solution, no refinement."""
    cfg.validate()
    rng = substream(cfg.seed, STREAM_STAGE, 1)
    t0 = time.perf_counter()
    meta = build_meta_problem(ds, graph, ds.docs, cfg, salt=1)
    encoder = DocumentEncoder.create(cfg.embed_dim, ds.vocab_size, rng, dtype=cfg.np_dtype)
    stack = LabelStack.create(
        cfg.embed_dim,
        cfg.n_clusters,
        ComponentConfig(order=cfg.conv_order, use_text=True, use_refine=False, fusion=cfg.fusion),
        rng,
        dtype=cfg.np_dtype,
    )
    state = PipelineState(config=cfg, graph=graph, encoder=encoder, meta_stack=stack, meta_problem=meta)
    _train_meta(
        ds, encoder, stack, meta, cfg, cfg.epochs_embed, cfg.lr_embed,
        train_embeddings=True, rng=rng, log=state.log, stage="embed",
    )
    state.log.timings["embed"] = time.perf_counter() - t0
    return state


def build_shortlister_stage(ds: XcDataset, state: PipelineState) -> PipelineState:
    """Stage 2: refit the meta problem on embedded centroids, extract shortlists."""
    cfg = state.config
    graph = state.graph
    encoder = state.encoder
    rng = substream(cfg.seed, STREAM_STAGE, 2)
    t0 = time.perf_counter()
    x0 = np.asarray(embed_tokens(ds.docs, encoder.embeddings.value), dtype=cfg.np_dtype)
    meta = build_meta_problem(ds, graph, x0, cfg, salt=2)
    u0 = embed_tokens(meta.meta_text, encoder.embeddings.value).astype(cfg.np_dtype)
    refine_init = (
        np.asarray(meta.cluster_graph @ u0) if cfg.graph_in_training else u0.copy()
    )
    old = state.meta_stack
    stack = LabelStack.create(
        cfg.embed_dim,
        cfg.n_clusters,
        ComponentConfig(order=cfg.conv_order, use_text=True, use_refine=True, fusion=cfg.fusion),
        rng,
        refine_init=refine_init,
        dtype=cfg.np_dtype,
    )
    # carry the fine-tuned blocks into the refit; attention is re-drawn since
    # the component count changed
    stack.text_block = old.text_block
    stack.graph_blocks = old.graph_blocks[: cfg.conv_order]
    _train_meta(
        ds, encoder, stack, meta, cfg, cfg.epochs_shortlist, cfg.lr_rank,
        train_embeddings=False, rng=rng, log=state.log, stage="shortlist",
    )
    convs = [np.asarray(g @ u0) for g in _graph_powers(meta.cluster_graph, cfg.conv_order)]
    h = materialize_classifiers(stack, u0, convs)
    shortlister = Shortlister(
        clusters=meta.clusters,
        assignment=meta.assignment,
        meta_classifiers=h,
        beam=cfg.beam_size,
        rerank_graph=meta.cluster_graph if cfg.graph_in_training else None,
    )
    x_hat = _embed_all(ds.docs, encoder)
    shortlists = train_shortlists(x_hat, shortlister, ds.labels)
    state.meta_stack = stack
    state.meta_problem = meta
    state.shortlister = shortlister
    state.shortlists = shortlists
    state.log.timings["shortlist"] = time.perf_counter() - t0
    return state


def _embed_all(docs: sp.csr_matrix, encoder: DocumentEncoder, batch: int = 8192) -> np.ndarray:
    out = np.empty((docs.shape[0], encoder.dim), dtype=encoder.embeddings.value.dtype)
    for lo in range(0, docs.shape[0], batch):
        hi = min(lo + batch, docs.shape[0])
        out[lo:hi], _ = encoder.forward(docs[lo:hi], EVAL)
    return out


def initialize_ranker(ds: XcDataset, state: PipelineState) -> PipelineState:
    """Stage 3: identity blocks, fresh attention, graph-seeded refinement."""
    cfg = state.config
    rng = substream(cfg.seed, STREAM_STAGE, 3)
    encoder = state.encoder
    encoder.block = EmbeddingBlock.identity(cfg.embed_dim, cfg.np_dtype)
    z0 = embed_tokens(ds.label_text, encoder.embeddings.value).astype(cfg.np_dtype)
    refine_init = (
        np.asarray(state.graph.g @ z0, dtype=cfg.np_dtype)
        if cfg.graph_in_training
        else z0.copy()
    )
    ccfg = ComponentConfig(
        order=cfg.conv_order,
        use_text=cfg.use_text,
        use_refine=cfg.use_refine,
        fusion=cfg.fusion,
    )
    state.ranker = LabelStack.create(
        cfg.embed_dim, ds.n_labels, ccfg, rng,
        refine_init=refine_init if cfg.use_refine else None,
        dtype=cfg.np_dtype,
    )
    return state


def train_ranker(ds: XcDataset, state: PipelineState) -> PipelineState:
    """Stage 4: train the per-label classifiers on positives + shortlisted negatives."""
    cfg = state.config
    encoder = state.encoder
    stack = state.ranker
    rng = substream(cfg.seed, STREAM_STAGE, 4)
    t0 = time.perf_counter()
    dtype = cfg.np_dtype

    z0 = embed_tokens(ds.label_text, encoder.embeddings.value).astype(dtype)
    convs = [
        np.asarray(g @ z0, dtype=dtype)
        for g in _graph_powers(_conv_graph(cfg, state.graph), cfg.conv_order)
    ]

    truth = ds.labels.tocsr()
    skipped = 0
    point_labels: list[np.ndarray] = []
    point_targets: list[np.ndarray] = []
    live_points: list[int] = []
    for i, labels in enumerate(state.shortlists):
        if labels.size == 0:
            skipped += 1
            continue
        pos = truth.indices[truth.indptr[i] : truth.indptr[i + 1]]
        tgt = np.where(np.isin(labels, pos), 1.0, -1.0).astype(dtype)
        point_labels.append(labels)
        point_targets.append(tgt)
        live_points.append(i)
    state.log.counters["skipped_points"] = skipped
    live = np.asarray(live_points, dtype=np.int64)

    params = dict(stack.params("labels"))
    params.update(encoder.params("docs", include_embeddings=False))
    opt = Adam(params, cfg.lr_rank)
    _scale_attention_lr(opt, cfg)
    spectral = dict(stack.spectral_matrices("labels"))
    spectral["docs.block.weight"] = encoder.block.weight
    spec_states = _spectral_states(spectral, rng, dtype)
    decay_every = _decay_every(live.size, cfg)
    log = state.log
    log.section("stage rank")
    losses = log.epoch_loss.setdefault("rank", [])
    step = 0
    for epoch in range(cfg.epochs_rank):
        order = rng.permutation(live.size)
        epoch_losses = []
        for lo in range(0, live.size, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            ctx = TrainContext(training=True, dropout=cfg.dropout, rng=rng)
            x_hat, doc_cache = encoder.forward(ds.docs[live[sel]], ctx)

            labels_cat = np.concatenate([point_labels[s] for s in sel])
            targets_cat = np.concatenate([point_targets[s] for s in sel])
            counts = np.array([point_labels[s].size for s in sel])
            pair_point = np.repeat(np.arange(sel.size), counts)
            uniq, inverse = np.unique(labels_cat, return_inverse=True)

            w, _, cache = stack.forward(
                uniq,
                z0[uniq] if stack.text_block is not None else None,
                [c[uniq] for c in convs],
                ctx,
            )
            scores = np.einsum("pd,pd->p", x_hat[pair_point], w[inverse])
            loss, dscores = bce_with_logits(scores, targets_cat)
            _check_finite(loss)
            dw = np.zeros_like(w)
            np.add.at(dw, inverse, dscores[:, None] * x_hat[pair_point])
            dx_hat = np.zeros_like(x_hat)
            np.add.at(dx_hat, pair_point, dscores[:, None] * w[inverse])
            stack.backward(dw, cache)
            encoder.backward(dx_hat, doc_cache, train_embeddings=False)
            opt.step()
            opt.zero_grad()
            for name, st in spec_states.items():
                st.apply(spectral[name].value)
            step += 1
            if step % decay_every == 0:
                opt.decay(cfg.lr_decay)
            log.record(epoch, step, loss, opt.lr)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
    log.timings["rank"] = time.perf_counter() - t0
    return state


def make_predictor(ds: XcDataset, state: PipelineState):
    """Materialize evaluation-mode classifiers and bundle them for inference."""
    from .infer import Predictor

    cfg = state.config
    z0 = embed_tokens(ds.label_text, state.encoder.embeddings.value).astype(cfg.np_dtype)
    convs = [
        np.asarray(g @ z0, dtype=cfg.np_dtype)
        for g in _graph_powers(_conv_graph(cfg, state.graph), cfg.conv_order)
    ]
    w = materialize_classifiers(
        state.ranker,
        z0 if state.ranker.text_block is not None else None,
        convs,
    )
    return Predictor(
        encoder=state.encoder,
        classifiers=w,
        shortlister=state.shortlister,
        graph=state.graph.g if cfg.graph_in_training else None,
        topk=cfg.topk,
    )


def run_pipeline(
    ds: XcDataset,
    cfg: TrainConfig,
    graph: LabelGraph | None = None,
    checkpoint=None,
):
    """All four stages end to end; returns (PipelineState, Predictor).

    ``checkpoint`` is an optional callable invoked as checkpoint(stage_name,
    state) after each stage.
    """
    cfg.validate()
    if graph is None:
        graph = ensure_graph(ds, cfg)
    state = train_token_embeddings(ds, graph, cfg)
    if checkpoint:
        checkpoint("embed", state)
    state = build_shortlister_stage(ds, state)
    if checkpoint:
        checkpoint("shortlist", state)
    state = initialize_ranker(ds, state)
    if checkpoint:
        checkpoint("init", state)
    state = train_ranker(ds, state)
    if checkpoint:
        checkpoint("rank", state)
    return state, make_predictor(ds, state)


def evaluate_meta_precision(
    ds: XcDataset, encoder: DocumentEncoder, h: np.ndarray, targets: sp.csr_matrix
) -> float:
    """Top-1 precision of the cluster-level model (training diagnostics)."""
    x_hat = _embed_all(ds.docs, encoder)
    best = np.argmax(x_hat @ h.T, axis=1)
    targets = targets.tocsr()
    hits = sum(
        1
        for i, b in enumerate(best)
        if b in targets.indices[targets.indptr[i] : targets.indptr[i + 1]]
    )
    return hits / max(1, len(best))

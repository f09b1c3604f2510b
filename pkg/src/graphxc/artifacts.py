"""Serialization of training stages so CLI runs can checkpoint and resume."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import XcDataset
from .graph import LabelGraph, induced_cluster_graph
from .infer import Predictor
from .model import ComponentConfig, DocumentEncoder, EmbeddingBlock, LabelStack, Param
from .ops import load_tensors, save_tensors
from .shortlist import Shortlister, load_clusters, save_clusters
from .train import PipelineState, TrainConfig
from .util import STREAM_STAGE, substream

STAGE1 = "stage1.ckpt"
STAGE2 = "stage2.ckpt"
STAGE3 = "stage3.ckpt"
MODEL = "model.ckpt"
CLUSTERS2 = "stage2_clusters.txt"
SHORTLISTS = "shortlists.txt"


def _params_values(params: dict[str, Param]) -> dict[str, np.ndarray]:
    return {name: p.value for name, p in params.items()}


def _load_into(params: dict[str, Param], tensors: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        if name not in tensors:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.value.shape:
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {p.value.shape}"
            )
        p.value = tensors[name].copy()


def _encoder_for(cfg: TrainConfig, vocab: int) -> DocumentEncoder:
    rng = substream(cfg.seed, STREAM_STAGE, 1)
    return DocumentEncoder.create(cfg.embed_dim, vocab, rng, dtype=cfg.np_dtype)


def _meta_stack_for(cfg: TrainConfig, use_refine: bool) -> LabelStack:
    rng = substream(cfg.seed, STREAM_STAGE, 2 if use_refine else 1)
    return LabelStack.create(
        cfg.embed_dim,
        cfg.n_clusters,
        ComponentConfig(order=cfg.conv_order, use_text=True, use_refine=use_refine, fusion=cfg.fusion),
        rng,
        refine_init=np.zeros((cfg.n_clusters, cfg.embed_dim), dtype=cfg.np_dtype) if use_refine else None,
        dtype=cfg.np_dtype,
    )


def _ranker_for(cfg: TrainConfig, n_labels: int) -> LabelStack:
    rng = substream(cfg.seed, STREAM_STAGE, 3)
    return LabelStack.create(
        cfg.embed_dim,
        n_labels,
        ComponentConfig(
            order=cfg.conv_order,
            use_text=cfg.use_text,
            use_refine=cfg.use_refine,
            fusion=cfg.fusion,
        ),
        rng,
        refine_init=np.zeros((n_labels, cfg.embed_dim), dtype=cfg.np_dtype) if cfg.use_refine else None,
        dtype=cfg.np_dtype,
    )


def save_stage1(workdir: Path, state: PipelineState) -> None:
    tensors = _params_values(state.encoder.params("docs"))
    tensors.update(_params_values(state.meta_stack.params("meta")))
    save_tensors(workdir / STAGE1, tensors)


def load_stage1(workdir: Path, cfg: TrainConfig, graph: LabelGraph, vocab: int) -> PipelineState:
    tensors = load_tensors(workdir / STAGE1)
    encoder = _encoder_for(cfg, vocab)
    stack = _meta_stack_for(cfg, use_refine=False)
    _load_into({**encoder.params("docs"), **stack.params("meta")}, tensors)
    return PipelineState(config=cfg, graph=graph, encoder=encoder, meta_stack=stack)


def save_stage2(workdir: Path, state: PipelineState) -> None:
    tensors = _params_values(state.encoder.params("docs"))
    tensors.update(_params_values(state.meta_stack.params("meta")))
    tensors["shortlister.classifiers"] = state.shortlister.meta_classifiers
    save_tensors(workdir / STAGE2, tensors)
    save_clusters(workdir / CLUSTERS2, state.shortlister.clusters)
    save_shortlists(workdir / SHORTLISTS, state.shortlists, state.shortlister.n_labels)


def load_stage2(workdir: Path, cfg: TrainConfig, graph: LabelGraph, vocab: int) -> PipelineState:
    tensors = load_tensors(workdir / STAGE2)
    encoder = _encoder_for(cfg, vocab)
    stack = _meta_stack_for(cfg, use_refine=True)
    _load_into({**encoder.params("docs"), **stack.params("meta")}, tensors)
    shortlister = load_shortlister(workdir, cfg, graph, tensors["shortlister.classifiers"])
    state = PipelineState(config=cfg, graph=graph, encoder=encoder, meta_stack=stack)
    state.shortlister = shortlister
    state.shortlists = load_shortlists(workdir / SHORTLISTS)
    return state


def save_stage3(workdir: Path, state: PipelineState) -> None:
    tensors = _params_values(state.encoder.params("docs"))
    tensors.update(_params_values(state.ranker.params("labels")))
    save_tensors(workdir / STAGE3, tensors)


def load_stage3(workdir: Path, cfg: TrainConfig, graph: LabelGraph, ds: XcDataset) -> PipelineState:
    state = load_stage2(workdir, cfg, graph, ds.vocab_size)
    tensors = load_tensors(workdir / STAGE3)
    state.encoder.block = EmbeddingBlock.identity(cfg.embed_dim, cfg.np_dtype)
    state.ranker = _ranker_for(cfg, ds.n_labels)
    _load_into(
        {**state.encoder.params("docs"), **state.ranker.params("labels")}, tensors
    )
    return state


def save_model(workdir: Path, state: PipelineState, predictor: Predictor) -> None:
    tensors = _params_values(state.encoder.params("docs"))
    tensors.update(_params_values(state.ranker.params("labels")))
    tensors["classifiers"] = predictor.classifiers
    tensors["shortlister.classifiers"] = predictor.shortlister.meta_classifiers
    save_tensors(workdir / MODEL, tensors)


def load_shortlister(
    workdir: Path, cfg: TrainConfig, graph: LabelGraph, meta_classifiers: np.ndarray
) -> Shortlister:
    from .cluster import assignment_matrix

    clusters = load_clusters(workdir / CLUSTERS2)
    n_labels = graph.g.shape[0]
    assignment = assignment_matrix(clusters, n_labels)
    rerank = (
        induced_cluster_graph(graph.g, assignment) if cfg.graph_in_training else None
    )
    return Shortlister(
        clusters=clusters,
        assignment=assignment,
        meta_classifiers=meta_classifiers,
        beam=cfg.beam_size,
        rerank_graph=rerank,
    )


def load_predictor(workdir: Path, cfg: TrainConfig, graph: LabelGraph, ds: XcDataset) -> Predictor:
    tensors = load_tensors(workdir / MODEL)
    encoder = _encoder_for(cfg, ds.vocab_size)
    _load_into(encoder.params("docs"), tensors)
    shortlister = load_shortlister(workdir, cfg, graph, tensors["shortlister.classifiers"])
    return Predictor(
        encoder=encoder,
        classifiers=tensors["classifiers"],
        shortlister=shortlister,
        graph=graph.g if cfg.graph_in_training else None,
        topk=cfg.topk,
    )


def save_shortlists(path, shortlists: list[np.ndarray], n_labels: int) -> None:
    from .sparse_io import write_matrix

    indptr = np.zeros(len(shortlists) + 1, dtype=np.int64)
    np.cumsum([s.size for s in shortlists], out=indptr[1:])
    indices = (
        np.concatenate(shortlists) if shortlists else np.empty(0, dtype=np.int64)
    )
    mat = sp.csr_matrix(
        (np.ones(indices.size, dtype=np.float32), indices, indptr),
        shape=(len(shortlists), n_labels),
    )
    write_matrix(path, mat)


def load_shortlists(path) -> list[np.ndarray]:
    from .sparse_io import read_matrix

    mat = read_matrix(path)
    return [
        mat.indices[mat.indptr[i] : mat.indptr[i + 1]].astype(np.int64)
        for i in range(mat.shape[0])
    ]

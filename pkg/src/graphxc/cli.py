"""Command-line interface: batch subcommands over a JSON run config.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .cluster import cluster_labels, graph_centroids
from .config import ConfigError, RunConfig, VARIANTS, apply_variant, load_config
from .data import compute_stats, label_frequencies, load_dataset, tfidf_dataset
from .graph import LabelGraph, WalkConfig, build_label_graph, load_graph, save_graph
from .metrics import (
    bin_contributions,
    metrics_report,
    mutual_information_loss,
    precision_at_k,
    write_report,
)
from .ops import NumericError
from .shortlist import load_clusters, save_clusters
from .sparse_io import BoundsError, FormatError, read_matrix, write_matrix
from .train import (
    build_shortlister_stage,
    initialize_ranker,
    make_predictor,
    run_pipeline,
    train_ranker,
    train_token_embeddings,
)

GRAPH_FILE = "graph.txt"
GRAPH_COUNTS_FILE = "graph_counts.txt"
CLUSTERS_FILE = "clusters.txt"
PREDICTIONS_FILE = "predictions.txt"
METRICS_FILE = "metrics.txt"
LOG_FILE = "train.log"


def _load_train_dataset(cfg: RunConfig):
    ds = load_dataset(cfg.path("train_file"), cfg.path("label_text_file"))
    if cfg.tfidf:
        ds = tfidf_dataset(ds)
    return ds


def _load_test_dataset(cfg: RunConfig, train_ds):
    from .data import XcDataset, apply_tfidf, fit_idf
    from .sparse_io import read_labeled_matrix

    docs, labels = read_labeled_matrix(cfg.path("test_file"))
    if cfg.tfidf:
        raw_train, _ = read_labeled_matrix(cfg.path("train_file"))
        docs = apply_tfidf(docs, fit_idf(raw_train))
    if labels.shape[1] != train_ds.n_labels:
        raise FormatError(
            f"test file declares {labels.shape[1]} labels, train has {train_ds.n_labels}"
        )
    return docs, labels


def _graph_paths(cfg: RunConfig):
    return cfg.workpath(GRAPH_FILE), cfg.workpath(GRAPH_COUNTS_FILE)


def _require_graph(cfg: RunConfig) -> LabelGraph:
    norm_path, counts_path = _graph_paths(cfg)
    if not norm_path.exists():
        raise FormatError(
            f"graph file {norm_path} not found; run 'graphxc build-graph' first"
        )
    g, walk_cfg = load_graph(norm_path)
    g_raw, _ = load_graph(counts_path) if counts_path.exists() else (g, walk_cfg)
    # head/isolated bookkeeping is only needed at build time; recompute what
    # prediction requires from the stored matrices
    return LabelGraph(
        g=g,
        g_raw=g_raw,
        head_labels=np.empty(0, dtype=np.int64),
        isolated=np.empty(0, dtype=np.int64),
        config=walk_cfg,
    )


def cmd_build_graph(cfg: RunConfig) -> int:
    ds = _load_train_dataset(cfg)
    tc = cfg.train_config()
    graph = build_label_graph(
        ds.labels, tc.walk, kind=tc.graph_kind, n_workers=tc.n_workers
    )
    workdir = cfg.path("workdir")
    workdir.mkdir(parents=True, exist_ok=True)
    norm_path, counts_path = _graph_paths(cfg)
    save_graph(counts_path, graph.g_raw, tc.walk)
    save_graph(norm_path, graph.g, tc.walk)
    print(f"wrote {counts_path} and {norm_path} ({graph.g.nnz} edges)")
    return 0


def cmd_cluster(cfg: RunConfig) -> int:
    ds = _load_train_dataset(cfg)
    tc = cfg.train_config()
    graph = _require_graph(cfg)
    freq = label_frequencies(ds.labels)
    centroids = graph_centroids(
        ds.docs, ds.labels, graph.g if tc.graph_in_training else None
    )
    clusters = cluster_labels(
        centroids,
        tc.n_clusters,
        label_freq=freq,
        head_threshold=tc.walk.head_threshold,
        seed=tc.seed,
        salt=1,
    )
    out = cfg.workpath(CLUSTERS_FILE)
    save_clusters(out, clusters)
    print(f"wrote {out} ({len(clusters)} clusters)")
    return 0


def _write_log(cfg: RunConfig, lines: list[str]) -> None:
    with open(cfg.workpath(LOG_FILE), "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def cmd_train(cfg: RunConfig, resume: bool = False) -> int:
    ds = _load_train_dataset(cfg)
    tc = cfg.train_config()
    graph = _require_graph(cfg)
    workdir = cfg.path("workdir")
    workdir.mkdir(parents=True, exist_ok=True)

    done = lambda name: resume and (workdir / name).exists()
    if done(artifacts.MODEL):
        print("model checkpoint already present; nothing to do")
        return 0

    if done(artifacts.STAGE3):
        state = artifacts.load_stage3(workdir, tc, graph, ds)
    elif done(artifacts.STAGE2):
        state = artifacts.load_stage2(workdir, tc, graph, ds.vocab_size)
        state = initialize_ranker(ds, state)
        artifacts.save_stage3(workdir, state)
    elif done(artifacts.STAGE1):
        state = artifacts.load_stage1(workdir, tc, graph, ds.vocab_size)
        state = build_shortlister_stage(ds, state)
        artifacts.save_stage2(workdir, state)
        state = initialize_ranker(ds, state)
        artifacts.save_stage3(workdir, state)
    else:
        state = train_token_embeddings(ds, graph, tc)
        artifacts.save_stage1(workdir, state)
        state = build_shortlister_stage(ds, state)
        artifacts.save_stage2(workdir, state)
        state = initialize_ranker(ds, state)
        artifacts.save_stage3(workdir, state)

    state = train_ranker(ds, state)
    predictor = make_predictor(ds, state)
    artifacts.save_model(workdir, state, predictor)
    _write_log(cfg, state.log.lines)
    print(f"wrote {workdir / artifacts.MODEL}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    ds = _load_train_dataset(cfg)
    tc = cfg.train_config()
    graph = _require_graph(cfg)
    workdir = cfg.path("workdir")
    if not (workdir / artifacts.MODEL).exists():
        raise FormatError(
            f"model checkpoint {workdir / artifacts.MODEL} not found; run "
            "'graphxc train' first"
        )
    predictor = artifacts.load_predictor(workdir, tc, graph, ds)
    docs, _ = _load_test_dataset(cfg, ds)
    scores = predictor.predict(docs, k=tc.topk)
    out = Path(cfg.values.get("predictions_file") or cfg.workpath(PREDICTIONS_FILE))
    write_matrix(out, scores)
    print(f"wrote {out}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    ds = _load_train_dataset(cfg)
    pred_path = Path(cfg.values.get("predictions_file") or cfg.workpath(PREDICTIONS_FILE))
    if not pred_path.exists():
        raise FormatError(
            f"predictions file {pred_path} not found; run 'graphxc predict' first"
        )
    scores = read_matrix(pred_path)
    _, truth = _load_test_dataset(cfg, ds)
    freq = label_frequencies(ds.labels)
    rows = metrics_report(
        scores, truth, freq, ds.n_docs, ks=list(cfg.metric_ks),
        a=cfg.propensity_a, b=cfg.propensity_b,
    )
    k = max(cfg.metric_ks)
    contrib = bin_contributions(scores, truth, freq, k=k, n_bins=cfg.bins)
    rows += [(f"Pbin{i}", k, float(c)) for i, c in enumerate(contrib)]
    assignment_path = cfg.values.get("cluster_assignment_file")
    if assignment_path:
        clusters = load_clusters(assignment_path)
        lab2c = np.full(ds.n_labels, -1, dtype=np.int64)
        for c, members in enumerate(clusters):
            lab2c[members] = c
        rows.append(("LMI", 0, mutual_information_loss(lab2c, ds.labels)))
    out = cfg.workpath(METRICS_FILE)
    write_report(out, rows)
    for metric, kk, value in rows:
        print(f"{metric} {kk} {value:.6f}")
    return 0


def cmd_ablate(cfg: RunConfig, variant: str) -> int:
    vcfg = apply_variant(cfg, variant)
    vcfg.path("workdir").mkdir(parents=True, exist_ok=True)
    code = cmd_build_graph(vcfg)
    code = code or cmd_train(vcfg)
    code = code or cmd_predict(vcfg)
    return code or cmd_eval(vcfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphxc",
        description="extreme multi-label classification with label-correlation graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("build-graph", "build and store the label-correlation graph"),
        ("cluster", "cluster labels on graph-smoothed centroids"),
        ("train", "run the four training stages and store checkpoints"),
        ("predict", "score the test set with the trained model"),
        ("eval", "compute ranking metrics from stored predictions"),
        ("ablate", "run a named variant end to end"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from stage checkpoints")
        if name == "ablate":
            p.add_argument(
                "--variant", required=True, choices=sorted(VARIANTS), help="ablation variant"
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config, overrides={"seed": args.seed, "threads": args.threads}
        )
        if args.command == "build-graph":
            return cmd_build_graph(cfg)
        if args.command == "cluster":
            return cmd_cluster(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.variant)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FormatError, BoundsError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

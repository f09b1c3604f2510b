"""graphxc: extreme multi-label classification with label-correlation graphs."""

from .data import XcDataset, compute_stats, load_dataset, save_dataset, tfidf_dataset
from .estimator import GraphXCClassifier
from .graph import LabelGraph, WalkConfig, build_label_graph
from .infer import Predictor, game_external
from .metrics import (
    bin_contributions,
    mutual_information_loss,
    precision_at_k,
    psp_at_k,
    recall_at_k,
)
from .shortlist import Shortlister
from .train import TrainConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "GraphXCClassifier",
    "LabelGraph",
    "Predictor",
    "Shortlister",
    "TrainConfig",
    "WalkConfig",
    "XcDataset",
    "bin_contributions",
    "build_label_graph",
    "compute_stats",
    "game_external",
    "load_dataset",
    "mutual_information_loss",
    "precision_at_k",
    "psp_at_k",
    "recall_at_k",
    "run_pipeline",
    "save_dataset",
    "tfidf_dataset",
    "__version__",
]

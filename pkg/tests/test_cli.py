import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from graphxc.cli import main
from graphxc.config import ConfigError, load_config
from graphxc.data import save_dataset
from graphxc.sparse_io import write_labeled_matrix, write_matrix

from .synth import separable_dataset


def write_config(tmp_path, **extra):
    cfg = {
        "train_file": str(tmp_path / "train.txt"),
        "test_file": str(tmp_path / "train.txt"),
        "label_text_file": str(tmp_path / "labels.txt"),
        "workdir": str(tmp_path / "work"),
        "embed_dim": 16,
        "n_clusters": 8,
        "beam_size": 4,
        "batch_size": 128,
        "epochs_embed": 8,
        "epochs_shortlist": 4,
        "epochs_rank": 4,
        "lr_embed": 0.05,
        "lr_rank": 0.2,
        "decay_interval": 5.0,
        "seed": 0,
        "tfidf": True,
        "metric_ks": [1, 3],
        "topk": 5,
    }
    cfg.update(extra)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


@pytest.fixture()
def workspace(tmp_path):
    ds = separable_dataset(0, n_docs=200, n_labels=32, vocab=100, tfidf=False)
    save_dataset(ds, tmp_path / "train.txt", tmp_path / "labels.txt")
    (tmp_path / "work").mkdir()
    return tmp_path, ds


class TestConfig:
    def test_unknown_key_rejected(self, workspace, tmp_path):
        p = write_config(tmp_path, bogus=1)
        assert main(["train", "--config", str(p)]) == 2

    def test_stage1_refinement_rejected(self, workspace, tmp_path):
        p = write_config(tmp_path, stage1_refine=True)
        assert main(["train", "--config", str(p)]) == 2

    def test_cooc_excludes_walk_config(self, workspace, tmp_path):
        p = write_config(tmp_path, graph="cooc", walk_length=100)
        assert main(["build-graph", "--config", str(p)]) == 2

    def test_missing_train_file(self, workspace, tmp_path):
        p = write_config(tmp_path, train_file=str(tmp_path / "nope.txt"))
        assert main(["build-graph", "--config", str(p)]) == 2

    def test_env_override(self, workspace, tmp_path, monkeypatch):
        p = write_config(tmp_path)
        monkeypatch.setenv("GRAPHXC_SEED", "nonsense")
        assert main(["build-graph", "--config", str(p)]) == 2
        monkeypatch.setenv("GRAPHXC_SEED", "3")
        cfg = load_config(p)
        assert cfg.seed == 3

    def test_bad_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert main(["build-graph", "--config", str(p)]) == 2


class TestBuildGraph:
    def test_identity_truth_diagonal_graph(self, tmp_path):
        docs = sp.csr_matrix(np.eye(3, 5, dtype=np.float32))
        labels = sp.csr_matrix(np.eye(3, dtype=np.float32))
        write_labeled_matrix(tmp_path / "train.txt", docs, labels)
        write_matrix(tmp_path / "labels.txt", sp.csr_matrix(np.eye(3, 5, dtype=np.float32)))
        (tmp_path / "work").mkdir()
        p = write_config(tmp_path, n_clusters=2, beam_size=1, embed_dim=4, walk_length=20)
        assert main(["build-graph", "--config", str(p)]) == 0
        lines = (tmp_path / "work" / "graph.txt").read_text().splitlines()
        assert lines[1] == "3 3"
        for i, row in enumerate(lines[2:]):
            assert row.split()[0].startswith(f"{i}:")
            assert len(row.split()) == 1

    def test_rerun_identical_bytes(self, workspace, tmp_path):
        p = write_config(tmp_path)
        assert main(["build-graph", "--config", str(p)]) == 0
        first = (tmp_path / "work" / "graph.txt").read_bytes()
        assert main(["build-graph", "--config", str(p)]) == 0
        assert (tmp_path / "work" / "graph.txt").read_bytes() == first

    def test_chain_dataset_two_hop_edge(self, tmp_path):
        docs = sp.csr_matrix(np.eye(2, 6, dtype=np.float32))
        labels = sp.csr_matrix(
            np.array([[1, 1, 0], [0, 1, 1]], dtype=np.float32)
        )
        write_labeled_matrix(tmp_path / "train.txt", docs, labels)
        write_matrix(tmp_path / "labels.txt", sp.csr_matrix(np.eye(3, 6, dtype=np.float32)))
        (tmp_path / "work").mkdir()
        p = write_config(tmp_path, n_clusters=2, beam_size=1, embed_dim=4)
        assert main(["build-graph", "--config", str(p)]) == 0
        from graphxc.graph import load_graph

        g, _ = load_graph(tmp_path / "work" / "graph.txt")
        assert g[0, 2] > 0


class TestPipelineCommands:
    def test_train_requires_graph(self, workspace, tmp_path, capsys):
        p = write_config(tmp_path)
        assert main(["train", "--config", str(p)]) == 3
        assert "build-graph" in capsys.readouterr().err

    def test_full_pipeline(self, workspace, tmp_path, capsys):
        p = write_config(tmp_path)
        assert main(["build-graph", "--config", str(p)]) == 0
        assert main(["cluster", "--config", str(p)]) == 0
        assert main(["train", "--config", str(p)]) == 0
        work = tmp_path / "work"
        for name in ("stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "model.ckpt", "train.log"):
            assert (work / name).exists(), name
        # log lines are "epoch step loss lr" records
        for line in (work / "train.log").read_text().splitlines():
            if line.startswith("#"):
                continue
            epoch, step, loss, lr = line.split()
            int(epoch), int(step), float(loss), float(lr)
        assert main(["predict", "--config", str(p)]) == 0
        assert main(["eval", "--config", str(p)]) == 0
        out = capsys.readouterr().out
        metrics = (work / "metrics.txt").read_text().splitlines()
        parsed = {}
        for line in metrics:
            metric, k, value = line.split()
            parsed[(metric, int(k))] = float(value)
        assert parsed[("P", 1)] > 0.5
        assert ("PSP", 3) in parsed
        # bin contributions add up to P@maxk
        bins = [v for (m, _), v in parsed.items() if m.startswith("Pbin")]
        assert sum(bins) == pytest.approx(parsed[("P", 3)], abs=1e-6)

    def test_eval_with_assignment_emits_lmi(self, workspace, tmp_path):
        p = write_config(tmp_path)
        main(["build-graph", "--config", str(p)])
        main(["cluster", "--config", str(p)])
        main(["train", "--config", str(p)])
        main(["predict", "--config", str(p)])
        cfg = json.loads((tmp_path / "config.json").read_text())
        cfg["cluster_assignment_file"] = str(tmp_path / "work" / "clusters.txt")
        (tmp_path / "config.json").write_text(json.dumps(cfg))
        assert main(["eval", "--config", str(tmp_path / "config.json")]) == 0
        text = (tmp_path / "work" / "metrics.txt").read_text()
        assert "LMI" in text

    def test_eval_on_perfect_predictions(self, workspace, tmp_path):
        _, ds = workspace
        p = write_config(tmp_path)
        (tmp_path / "work").mkdir(exist_ok=True)
        # rank each point's positives rarest-first so the propensity-scored
        # ideal is attained too
        from graphxc.data import label_frequencies

        freq = label_frequencies(ds.labels)
        perfect = ds.labels.astype(np.float32).copy()
        perfect.data = (1.0 / (1.0 + freq[perfect.indices])).astype(np.float32)
        write_matrix(tmp_path / "work" / "predictions.txt", perfect)
        assert main(["eval", "--config", str(p)]) == 0
        metrics = dict()
        for line in (tmp_path / "work" / "metrics.txt").read_text().splitlines():
            metric, k, value = line.split()
            metrics[(metric, int(k))] = float(value)
        assert metrics[("P", 1)] == pytest.approx(1.0)
        assert metrics[("PSP", 1)] == pytest.approx(1.0)


class TestDeterminismAndResume:
    def test_train_idempotent_in_float64(self, workspace, tmp_path):
        p = write_config(
            tmp_path, precision="float64", epochs_embed=4, epochs_shortlist=2, epochs_rank=2
        )
        main(["build-graph", "--config", str(p)])
        assert main(["train", "--config", str(p)]) == 0
        model1 = (tmp_path / "work" / "model.ckpt").read_bytes()
        assert main(["train", "--config", str(p)]) == 0
        assert (tmp_path / "work" / "model.ckpt").read_bytes() == model1

    def test_resume_from_stage3_reproduces_metrics(self, workspace, tmp_path):
        p = write_config(
            tmp_path, precision="float64", epochs_embed=4, epochs_shortlist=2, epochs_rank=3
        )
        main(["build-graph", "--config", str(p)])
        assert main(["train", "--config", str(p)]) == 0
        assert main(["predict", "--config", str(p)]) == 0
        assert main(["eval", "--config", str(p)]) == 0
        work = tmp_path / "work"
        metrics1 = (work / "metrics.txt").read_text()
        model1 = (work / "model.ckpt").read_bytes()
        (work / "model.ckpt").unlink()
        assert main(["train", "--config", str(p), "--resume"]) == 0
        assert (work / "model.ckpt").read_bytes() == model1
        assert main(["predict", "--config", str(p)]) == 0
        assert main(["eval", "--config", str(p)]) == 0
        metrics2 = (work / "metrics.txt").read_text()
        for l1, l2 in zip(metrics1.splitlines(), metrics2.splitlines()):
            m1, k1, v1 = l1.split()
            m2, k2, v2 = l2.split()
            assert (m1, k1) == (m2, k2)
            assert abs(float(v1) - float(v2)) <= 1e-6


class TestAblate:
    @pytest.mark.parametrize("variant", ["no_graph", "sum"])
    def test_variant_runs_end_to_end(self, workspace, tmp_path, variant):
        p = write_config(tmp_path, epochs_embed=4, epochs_shortlist=2, epochs_rank=2)
        assert main(["ablate", "--config", str(p), "--variant", variant]) == 0
        vdir = tmp_path / "work" / f"variant_{variant}"
        assert (vdir / "metrics.txt").exists()

    def test_unknown_variant_rejected(self, workspace, tmp_path):
        p = write_config(tmp_path)
        with pytest.raises(SystemExit):
            main(["ablate", "--config", str(p), "--variant", "nope"])

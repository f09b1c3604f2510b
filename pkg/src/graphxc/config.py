"""Flat JSON run configuration with schema validation and env overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .graph import WalkConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, bad type, inconsistent flags)."""


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str):
        if v.lower() in ("true", "1", "yes"):
            return True
        if v.lower() in ("false", "0", "no"):
            return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_list(v):
    if isinstance(v, str):
        v = [p for p in v.replace(",", " ").split() if p]
    return [int(x) for x in v]


# key -> (parser, default); paths default to None and are resolved later
_SCHEMA = {
    "train_file": (str, None),
    "test_file": (str, None),
    "label_text_file": (str, None),
    "workdir": (str, None),
    "predictions_file": (str, None),
    "cluster_assignment_file": (str, None),
    "embed_dim": (int, 64),
    "n_clusters": (int, 64),
    "beam_size": (int, 8),
    "conv_order": (int, 1),
    "dropout": (float, 0.2),
    "batch_size": (int, 255),
    "epochs_embed": (int, 20),
    "epochs_shortlist": (int, 10),
    "epochs_rank": (int, 10),
    "lr_embed": (float, 0.01),
    "lr_rank": (float, 0.008),
    "lr_decay": (float, 0.5),
    "decay_interval": (float, 0.5),
    "walk_length": (int, 400),
    "restart_prob": (float, 0.8),
    "head_threshold": (int, 500),
    "seed": (int, 0),
    "precision": (str, "float32"),
    "tfidf": (_bool, True),
    "topk": (int, 5),
    "metric_ks": (_int_list, [1, 3, 5]),
    "propensity_a": (float, 0.55),
    "propensity_b": (float, 1.5),
    "bins": (int, 5),
    "threads": (int, 1),
    "graph": (str, "walk"),
    "no_graph": (_bool, False),
    "sum_fusion": (_bool, False),
    "no_lte": (_bool, False),
    "no_refine": (_bool, False),
    "stage1_refine": (_bool, False),
}

ENV_PREFIX = "GRAPHXC_"


@dataclass
class RunConfig:
    values: dict
    explicit: set = field(default_factory=set)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    def path(self, key: str) -> Path:
        v = self.values.get(key)
        if v is None:
            raise ConfigError(f"config key {key!r} is required for this command")
        return Path(v)

    def workpath(self, name: str) -> Path:
        return self.path("workdir") / name

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            embed_dim=v["embed_dim"],
            n_clusters=v["n_clusters"],
            beam_size=v["beam_size"],
            conv_order=v["conv_order"],
            dropout=v["dropout"],
            batch_size=v["batch_size"],
            epochs_embed=v["epochs_embed"],
            epochs_shortlist=v["epochs_shortlist"],
            epochs_rank=v["epochs_rank"],
            lr_embed=v["lr_embed"],
            lr_rank=v["lr_rank"],
            lr_decay=v["lr_decay"],
            decay_interval=v["decay_interval"],
            walk=WalkConfig(
                walk_length=v["walk_length"],
                restart_prob=v["restart_prob"],
                head_threshold=v["head_threshold"],
                seed=v["seed"],
            ),
            seed=v["seed"],
            dtype=v["precision"],
            graph_kind=v["graph"],
            fusion="sum" if v["sum_fusion"] else "attention",
            use_text=not v["no_lte"],
            use_refine=not v["no_refine"],
            graph_in_training=not v["no_graph"],
            topk=v["topk"],
            n_workers=v["threads"],
        ).validate()


def load_config(path, env: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse, override (file < env < CLI flags), and validate a run config."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of key/value pairs")

    env = os.environ if env is None else env
    values = {}
    explicit = set(raw)
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key {key!r}: {e}")
    for key, (parser, default) in _SCHEMA.items():
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            try:
                values[key] = parser(env[env_key])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"environment override {env_key}: {e}")
            explicit.add(key)
        elif key not in values:
            values[key] = default
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            explicit.add(key)

    cfg = RunConfig(values=values, explicit=explicit)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["graph"] not in ("walk", "cooc"):
        raise ConfigError("graph must be 'walk' or 'cooc'")
    if v["precision"] not in ("float32", "float64"):
        raise ConfigError("precision must be 'float32' or 'float64'")
    if v["stage1_refine"]:
        raise ConfigError(
            "stage1_refine: refinement vectors are disabled during the "
            "token-embedding stage; remove this flag"
        )
    if v["graph"] == "cooc" and ({"walk_length", "restart_prob"} & cfg.explicit):
        raise ConfigError(
            "graph='cooc' does not use random walks; remove walk_length / "
            "restart_prob from the config"
        )
    if v["no_lte"] and v["no_refine"] and v["conv_order"] < 1:
        raise ConfigError("at least one classifier component must stay enabled")
    for key in ("train_file", "test_file", "label_text_file"):
        val = v.get(key)
        if val is not None and not Path(val).exists():
            raise ConfigError(f"{key} does not exist: {val}")
    try:
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(str(e))


VARIANTS = {
    "default": {},
    "no_graph": {"no_graph": True},
    "cooc": {"graph": "cooc"},
    "sum": {"sum_fusion": True},
    "no_lte": {"no_lte": True},
    "no_refine": {"no_refine": True},
    "k2": {"conv_order": 2},
}


def apply_variant(cfg: RunConfig, name: str) -> RunConfig:
    if name not in VARIANTS:
        raise ConfigError(
            f"unknown ablation variant {name!r}; choose from {sorted(VARIANTS)}"
        )
    values = dict(cfg.values)
    values.update(VARIANTS[name])
    if name == "cooc":
        # the co-occurrence graph ignores walk parameters entirely
        values["walk_length"] = _SCHEMA["walk_length"][1]
        values["restart_prob"] = _SCHEMA["restart_prob"][1]
    out = RunConfig(values=values, explicit=set(cfg.explicit))
    out.values["workdir"] = str(Path(cfg.values["workdir"]) / f"variant_{name}")
    return out

"""Training configuration and its strict JSON form (unknown keys are rejected)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .distill import DistillConfig
from .graph import ConfigError, Graph, GraphBatch, load_citation, load_tu, sbm_generate
from .layers import ModelConfig

DATA_KINDS = ("citation", "graph_json", "sbm", "tu", "batch_json")


@dataclass
class DataConfig:
    kind: str = "sbm"
    content: str | None = None
    cites: str | None = None
    path: str | None = None
    directory: str | None = None
    name: str | None = None
    sbm: dict[str, Any] = field(default_factory=lambda: {"blocks": 2, "nodes_per_block": 100, "p_in": 0.5, "p_out": 0.05, "feat_dim": 8, "seed": 0})

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}")

    def load(self) -> Graph | GraphBatch:
        if self.kind == "citation":
            return load_citation(self.content, self.cites)
        if self.kind == "graph_json":
            return Graph.load(self.path)
        if self.kind == "sbm":
            return sbm_generate(**self.sbm)
        if self.kind == "tu":
            return load_tu(self.directory, self.name)
        return GraphBatch.from_json(json.loads(Path(self.path).read_text()))


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    drop_edge_ratio: float = 0.0
    task: str = "node"
    folds: int = 10
    batch_size: int = 32
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.drop_edge_ratio < 1.0:
            raise ConfigError("drop_edge_ratio must be in [0, 1)")
        if self.task not in ("node", "graph"):
            raise ConfigError("task must be 'node' or 'graph'")
        if self.distill.masked_ndr and self.task != "node":
            raise ConfigError("masked_ndr applies to node tasks only")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: dict[str, Any]) -> "TrainConfig":
        """Copy with dotted-key overrides, e.g. ``{"distill.beta": 1.0}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return from_dict(d)


_NESTED = {"model": ModelConfig, "distill": DistillConfig, "data": DataConfig}


def _build(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where or 'config'}")
    kw = {}
    for k, v in obj.items():
        if cls is TrainConfig and k in _NESTED:
            v = _build(_NESTED[k], v, k)
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def from_dict(obj: dict) -> TrainConfig:
    return _build(TrainConfig, obj, "")


def load_config(path: str | Path) -> TrainConfig:
    return from_dict(json.loads(Path(path).read_text()))

"""Reusable Cora experiment recipes shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import DataConfig, TrainConfig
from .distill import DistillConfig
from .graph import Graph
from .layers import ModelConfig
from .train import train_node

# reference per-depth GAT settings for Cora; deeper models use lighter dropout
GAT_CORA = dict(lr=1e-2, weight_decay=1e-3, epochs=300)
GAT_CORA_DROPOUT = {2: 0.5, 8: 0.1}


def gat_config(n_layers: int, seed: int = 0, dropout: float | None = None, **distill) -> TrainConfig:
    if dropout is None:
        dropout = GAT_CORA_DROPOUT.get(n_layers, 0.5)
    return TrainConfig(
        model=ModelConfig("gat", n_layers, 64, n_heads=4, dropout=dropout, activation="elu"),
        distill=DistillConfig(**distill),
        seed=seed,
        data=DataConfig("citation"),
        **GAT_CORA,
    )


def sage_config(n_layers: int = 4, seed: int = 0, epochs: int = 200, **distill) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig("sage", n_layers, 64, dropout=0.5),
        distill=DistillConfig(**distill),
        seed=seed,
        epochs=epochs,
        data=DataConfig("citation"),
    )


@dataclass
class SeedSummary:
    test: list[float]
    val: list[float]
    seconds: float

    @property
    def mean(self) -> float:
        return 100 * float(np.mean(self.test))

    @property
    def std(self) -> float:
        return 100 * float(np.std(self.test))

    @property
    def val_mean(self) -> float:
        return 100 * float(np.mean(self.val))


def over_seeds(g: Graph, make, seeds=range(5)) -> SeedSummary:
    """``make(seed) -> TrainConfig``; returns best-validation test accuracies."""
    t0 = time.perf_counter()
    runs = [train_node(g, make(s)) for s in seeds]
    return SeedSummary([r.test_acc for r in runs], [r.best_val for r in runs], time.perf_counter() - t0)


def final_ndr(g: Graph, cfg: TrainConfig) -> list[float]:
    """Per-layer mean NDR at the last epoch (eval mode), not at the best-validation epoch."""
    log = train_node(g, cfg).metrics
    return [float(log.column(f"ndr_{l}")[-1]) for l in range(1, cfg.model.n_layers + 1)]


def epoch_time(g: Graph, cfg: TrainConfig, epochs: int = 10) -> float:
    """Median per-epoch training time (forward, losses, backward, step)."""
    run = train_node(g, cfg.with_overrides({"epochs": epochs}))
    return float(np.median(run.metrics.column("train_time")[1:]))

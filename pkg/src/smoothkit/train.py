"""Full-batch node classification, k-fold graph classification, metrics and grid search."""

from __future__ import annotations

import csv
import itertools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .distill import (
    AdrReport,
    adr_loss,
    adr_loss_batch,
    graph_embed_loss,
    layer_ndrs,
    learnable_transform,
    logit_loss,
    ndr,
    total_loss,
)
from .graph import ConfigError, Graph, GraphBatch, UnionGraph, disjoint_union, drop_edge, masked_adjacency
from .layers import GNN, ForwardPass, save_checkpoint
from .optim import OptimizerState, adam_step

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("ce", "l_l", "l_n", "l_g", "total")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, metrics: "MetricsLog"):
        super().__init__(message)
        self.metrics = metrics


@dataclass
class MetricsLog:
    """Append-only per-epoch rows plus the per-layer ADR report rows."""

    n_layers: int
    rows: list[dict[str, Any]] = field(default_factory=list)
    adr_rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        ndr_cols = [f"ndr_{l}" for l in range(1, self.n_layers + 1)]
        return ["fold", "epoch", *LOSS_COLUMNS, *ndr_cols, "l_star", "train_acc", "val_acc", "test_acc", "train_time", "epoch_time", "status"]

    def append(self, row: dict[str, Any]) -> None:
        self.rows.append(row)

    def add_report(self, epoch: int, report: AdrReport | None, fold: int = 0) -> None:
        if report is None:
            return
        for l, s in enumerate(report.summaries, 1):
            self.adr_rows.append(
                {
                    "fold": fold,
                    "epoch": epoch,
                    "layer": l,
                    "ndr_summary": s,
                    "l_star": report.l_star,
                    "indicator_pattern": report.indicator_pattern,
                    "adr_loss": report.loss,
                }
            )

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def ndr_curves(self) -> np.ndarray:
        """``epochs x L`` matrix of per-layer NDR summaries."""
        return np.array([[r[f"ndr_{l}"] for l in range(1, self.n_layers + 1)] for r in self.rows])

    def write_csv(self, path: str | Path) -> None:
        cols = self.columns
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c, "") for c in cols})

    def write_adr_csv(self, path: str | Path) -> None:
        cols = ["fold", "epoch", "layer", "ndr_summary", "l_star", "indicator_pattern", "adr_loss"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(self.adr_rows)


@dataclass
class NodeRun:
    model: GNN
    metrics: MetricsLog
    best_epoch: int
    best_val: float
    test_acc: float


@dataclass
class GraphRun:
    metrics: MetricsLog
    fold_test: list[float]
    fold_val: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_test))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_test))


def _accuracy(logits: np.ndarray, labels: np.ndarray, mask=None) -> float:
    pred = logits.argmax(axis=1)
    if mask is not None:
        pred, labels = pred[mask], labels[mask]
    return float(np.mean(pred == labels)) if len(labels) else float("nan")


def build_model(cfg: TrainConfig, n_features: int, n_classes: int, seed: int | None = None) -> GNN:
    d = cfg.distill
    if d.beta > 0 and cfg.model.n_layers < 2:
        raise ConfigError("ADR (beta > 0) needs at least two layers")
    return GNN(
        cfg.model,
        n_features,
        n_classes,
        cfg.task,
        cfg.seed if seed is None else seed,
        intermediate_head=d.alpha > 0 and cfg.model.n_layers > 1,
        learnable_transform=d.learnable_transform and d.beta > 0,
    )


def _online_ndrs(model: GNN, adj, hidden: list[T.Tensor]):
    if not model.has_transform:
        return None
    return [ndr(adj, learnable_transform(x, model.transform(l)), l) for l, x in enumerate(hidden[1:], 1)]


def node_objective(model: GNN, g: Graph, fp: ForwardPass, cfg: TrainConfig, distill: bool = True):
    """Losses of one node-task forward pass: ``(terms, total, adr_report)``."""
    d = cfg.distill
    zero = T.Tensor(0.0)
    ce = T.softmax_cross_entropy(fp.logits, g.labels, g.masks["train"])
    l_l, l_n, report = zero, zero, None
    if distill and d.alpha > 0:
        l_l = logit_loss(fp.intermediate, fp.logits, g.masks["train"])
    if distill and d.beta > 0:
        adj = masked_adjacency(g) if d.masked_ndr else g.adjacency
        ndrs = [ndr(adj, x, l) for l, x in enumerate(fp.hidden[1:], 1)]
        l_n, report = adr_loss(g, ndrs, d, _online_ndrs(model, adj, fp.hidden))
    terms = {"ce": ce, "l_l": l_l, "l_n": l_n, "l_g": zero}
    total = total_loss(ce, l_l, l_n, zero, d) if distill else ce
    return terms, total, report


def train_node(g: Graph, cfg: TrainConfig, distill: bool = True, checkpoint: str | Path | None = None) -> NodeRun:
    """Semi-supervised full-batch training; the returned model holds the best-validation weights.

    ``distill=False`` bypasses every distillation term regardless of the
    configured weights.
    """
    for split in ("train", "val", "test"):
        if split not in g.masks:
            raise ConfigError(f"node task needs a {split!r} mask")
    model = build_model(cfg, g.n_features, g.n_classes)
    state = OptimizerState()
    rng = np.random.default_rng(cfg.seed)
    metrics = MetricsLog(cfg.model.n_layers)
    best = (-1.0, -1, float("nan"), model.state())
    names = list(model.params)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        g_ep = drop_edge(g, cfg.drop_edge_ratio, rng) if cfg.drop_edge_ratio > 0 else g
        with T.Tape() as tape:
            fp = model.forward(g_ep, training=True, rng=rng)
            terms, total, report = node_objective(model, g_ep, fp, cfg, distill)
        values = {k: v.item() for k, v in terms.items()} | {"total": total.item()}
        if not np.isfinite(values["total"]):
            metrics.append({"epoch": epoch, **values, "status": "diverged"})
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {values}", metrics)
        grads = tape.backward(total, model.params.values())
        adam_step(model.params, {n: grads[model.params[n]] for n in names}, state, cfg.lr, cfg.weight_decay)
        t_train = time.perf_counter() - t0

        ev = model.forward(g, training=False, intermediate=False)
        logits = ev.logits.value
        accs = {f"{s}_acc": _accuracy(logits, g.labels, g.masks[s]) for s in ("train", "val", "test")}
        summaries = {f"ndr_{l}": n.summary("mean") for l, n in enumerate(layer_ndrs(g, ev.hidden), 1)}
        row = {"fold": 0, "epoch": epoch, **values, **summaries, **accs}
        row["l_star"] = report.l_star if report else ""
        row["train_time"] = t_train
        row["epoch_time"] = time.perf_counter() - t0
        row["status"] = "ok"
        metrics.append(row)
        metrics.add_report(epoch, report)
        if accs["val_acc"] > best[0]:
            best = (accs["val_acc"], epoch, accs["test_acc"], model.state())
    model.load_state(best[3])
    if checkpoint is not None:
        save_checkpoint(model, checkpoint, epoch=best[1], extra={"val_acc": best[0], "test_acc": best[2]})
    return NodeRun(model, metrics, best[1], best[0], best[2])


# graph classification --------------------------------------------------------


def graph_objective(model: GNN, union: UnionGraph, labels: np.ndarray, fp: ForwardPass, cfg: TrainConfig, distill: bool = True):
    d = cfg.distill
    zero = T.Tensor(0.0)
    ce = T.softmax_cross_entropy(fp.logits, labels)
    l_l, l_n, l_g, reports = zero, zero, zero, []
    if distill and d.alpha > 0:
        l_l = logit_loss(fp.intermediate, fp.logits)
    if distill and d.beta > 0:
        adj = union.graph.adjacency
        ndrs = [ndr(adj, x, l) for l, x in enumerate(fp.hidden[1:], 1)]
        l_n, reports = adr_loss_batch(union, ndrs, d, _online_ndrs(model, adj, fp.hidden))
    if distill and d.gamma > 0:
        l_g = graph_embed_loss(fp.readouts, "shallow2deep")
    terms = {"ce": ce, "l_l": l_l, "l_n": l_n, "l_g": l_g}
    total = total_loss(ce, l_l, l_n, l_g, d) if distill else ce
    return terms, total, reports


def fold_split(folds: np.ndarray, k: int, n_folds: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8:1:1 style split: fold ``k`` tests, fold ``k+1`` validates, the rest train."""
    test = np.flatnonzero(folds == k)
    val = np.flatnonzero(folds == (k + 1) % n_folds)
    train = np.flatnonzero((folds != k) & (folds != (k + 1) % n_folds))
    return train, val, test


def _eval_graphs(model: GNN, batch: GraphBatch, idx: np.ndarray, chunk: int = 256) -> float:
    correct = 0
    for lo in range(0, len(idx), chunk):
        sel = idx[lo : lo + chunk]
        union = disjoint_union([batch.graphs[i] for i in sel])
        pred = model.forward(union, training=False, intermediate=False).logits.value.argmax(axis=1)
        correct += int(np.sum(pred == batch.labels[sel]))
    return correct / len(idx) if len(idx) else float("nan")


def train_graph(batch: GraphBatch, cfg: TrainConfig, distill: bool = True, folds: list[int] | None = None) -> GraphRun:
    """k-fold cross validation; per fold the test accuracy at the best validation epoch is kept."""
    n_folds = cfg.folds
    if len(batch) < n_folds:
        raise ValueError(f"{len(batch)} graphs cannot fill {n_folds} folds")
    if batch.folds is None or batch.folds.max() >= n_folds:
        batch = batch.assign_folds(n_folds, cfg.seed)
    metrics = MetricsLog(cfg.model.n_layers)
    fold_test, fold_val = [], []
    for k in range(n_folds) if folds is None else folds:
        train_idx, val_idx, test_idx = fold_split(batch.folds, k, n_folds)
        model = build_model(cfg, batch.n_features, batch.n_classes, seed=cfg.seed * 1000 + k)
        state = OptimizerState()
        rng = np.random.default_rng([cfg.seed, k])
        best = (-1.0, -1, float("nan"))
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(train_idx)
            sums = dict.fromkeys((*LOSS_COLUMNS,), 0.0)
            reports: list[AdrReport] = []
            batch_ndr: list[list[float]] = []
            n_batches = 0
            for lo in range(0, len(order), cfg.batch_size):
                sel = order[lo : lo + cfg.batch_size]
                members = [batch.graphs[i] for i in sel]
                if cfg.drop_edge_ratio > 0:
                    members = [drop_edge(m, cfg.drop_edge_ratio, rng) for m in members]
                union = disjoint_union(members)
                with T.Tape() as tape:
                    fp = model.forward(union, training=True, rng=rng)
                    terms, total, reps = graph_objective(model, union, batch.labels[sel], fp, cfg, distill)
                if not np.isfinite(total.item()):
                    metrics.append({"fold": k, "epoch": epoch, "total": total.item(), "status": "diverged"})
                    raise TrainingDiverged(f"non-finite loss in fold {k} epoch {epoch}", metrics)
                grads = tape.backward(total, model.params.values())
                adam_step(model.params, {n: grads[p] for n, p in model.params.items()}, state, cfg.lr, cfg.weight_decay)
                for name, t in terms.items():
                    sums[name] += t.item()
                sums["total"] += total.item()
                reports.extend(reps)
                if not reps:
                    batch_ndr.append([n.summary("mean") for n in layer_ndrs(union.graph, fp.hidden)])
                n_batches += 1
            t_train = time.perf_counter() - t0
            val_acc = _eval_graphs(model, batch, val_idx)
            test_acc = _eval_graphs(model, batch, test_idx)
            row = {"fold": k, "epoch": epoch, **{n: s / n_batches for n, s in sums.items()}}
            if reports:
                summ = np.mean([r.summaries for r in reports], axis=0)
                row.update({f"ndr_{l}": float(s) for l, s in enumerate(summ, 1)})
                row["l_star"] = int(np.bincount([r.l_star for r in reports]).argmax())
                metrics.add_report(epoch, _mean_report(reports), fold=k)
            else:
                row.update({f"ndr_{l}": float(s) for l, s in enumerate(np.mean(batch_ndr, axis=0), 1)})
            row.update(val_acc=val_acc, test_acc=test_acc, train_time=t_train, epoch_time=time.perf_counter() - t0, status="ok")
            metrics.append(row)
            if val_acc > best[0]:
                best = (val_acc, epoch, test_acc)
        fold_val.append(best[0])
        fold_test.append(best[2])
        log.info("fold %d: best val %.4f at epoch %d, test %.4f", k, best[0], best[1], best[2])
    return GraphRun(metrics, fold_test, fold_val)


def _mean_report(reports: list[AdrReport]) -> AdrReport:
    summ = list(np.mean([r.summaries for r in reports], axis=0))
    l_star = int(np.bincount([r.l_star for r in reports]).argmax())
    return AdrReport(summ, l_star, [], float(np.mean([r.loss for r in reports])))


# experiment drivers ------------------------------------------------------------


def run(cfg: TrainConfig, data: Graph | GraphBatch | None = None, checkpoint: str | Path | None = None) -> dict[str, Any]:
    """Train per ``cfg`` and return a summary dict; writes metrics under ``cfg.output_dir`` if set."""
    data = cfg.data.load() if data is None else data
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if checkpoint is None:
            checkpoint = out / "model"
    if cfg.task == "node":
        if not isinstance(data, Graph):
            raise ConfigError("node task needs a single graph")
        res = train_node(data, cfg, checkpoint=checkpoint)
        summary = {"val_acc": res.best_val, "test_acc": res.test_acc, "best_epoch": res.best_epoch}
    else:
        if not isinstance(data, GraphBatch):
            raise ConfigError("graph task needs a graph batch")
        res = train_graph(data, cfg)
        summary = {"val_acc": float(np.mean(res.fold_val)), "test_acc": res.mean, "test_std": res.std}
    if out is not None:
        res.metrics.write_csv(out / "metrics.csv")
        res.metrics.write_adr_csv(out / "adr.csv")
    return summary


def _grid_worker(args):
    cfg, overrides, data = args
    return overrides, run(cfg, data)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SMOOTHKIT_THREADS", "1")))
    except ValueError:
        return 1


def grid_search(space: dict[str, list], base: TrainConfig, data=None, csv_path: str | Path | None = None) -> list[dict[str, Any]]:
    """Run every combination of ``space`` (dotted config keys) and rank by validation accuracy.

    Runs in parallel processes when ``SMOOTHKIT_THREADS`` > 1.  Per-run output
    directories are disabled so workers never share files.
    """
    keys = list(space)
    combos = [dict(zip(keys, values)) for values in itertools.product(*(space[k] for k in keys))]
    base = base.with_overrides({"output_dir": None})
    data = base.data.load() if data is None else data
    jobs = [(base.with_overrides(c), c, data) for c in combos]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_grid_worker, jobs))
    else:
        results = [_grid_worker(j) for j in jobs]
    rows = [{**c, **summary} for c, summary in results]
    rows.sort(key=lambda r: -r["val_acc"])
    for rank, r in enumerate(rows, 1):
        r["rank"] = rank
    if csv_path is not None:
        cols = ["rank", *keys, *[k for k in rows[0] if k not in keys and k != "rank"]]
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
    return rows

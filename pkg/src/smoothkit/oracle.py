"""Brute-force references for the matrix-form code.

Everything here works from plain edge lists and per-node Python loops so
that it shares no arithmetic with ``tensor``/``graph``/``distill``.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

EPS = 1e-12


@dataclass
class OracleReport:
    name: str
    trials: int
    max_dev: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_dev <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {self.max_dev:.3e} {self.tol:.1e} {self.trials}"


def neighbour_lists(n: int, edges) -> list[list[int]]:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        i, j = int(i), int(j)
        if i != j:
            nbrs[i].add(j)
            nbrs[j].add(i)
    return [sorted(s) for s in nbrs]


def ndr_loop_oracle(n: int, edges, x) -> tuple[np.ndarray, np.ndarray]:
    """Per-node ``1 - cos(x_v, sum of neighbours)`` by scalar loops; returns (values, valid)."""
    x = np.asarray(x, dtype=float)
    nbrs = neighbour_lists(n, edges)
    out = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    for v in range(n):
        agg = [0.0] * x.shape[1]
        for c in nbrs[v]:
            for k in range(x.shape[1]):
                agg[k] += x[c, k]
        dot = sum(float(x[v, k]) * agg[k] for k in range(x.shape[1]))
        na = math.sqrt(sum(float(t) * float(t) for t in x[v]))
        nb = math.sqrt(sum(t * t for t in agg))
        if na < EPS or nb < EPS:
            continue
        valid[v] = True
        out[v] = min(2.0, max(0.0, 1.0 - dot / (na * nb)))
    return out, valid


def masked_pairs_oracle(n: int, edges, labels, train) -> list[tuple[int, int]]:
    """Edges surviving the label mask: dropped iff both ends are training nodes of one class."""
    kept = []
    for i, j in edges:
        if train[i] and train[j] and labels[i] == labels[j]:
            continue
        kept.append((int(i), int(j)))
    return kept


def prop1_oracle(n: int, edges, x, p: int) -> tuple[float, float]:
    """Neighbour-wise distance ``d2`` and distance-to-neighbour-mean ``d1``, both over directed edges."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    x = np.asarray(x, dtype=float)
    nbrs = neighbour_lists(n, edges)
    n_directed = sum(len(s) for s in nbrs)
    if n_directed == 0:
        return 0.0, 0.0

    def norm(vec) -> float:
        return sum(abs(t) for t in vec) if p == 1 else math.sqrt(sum(t * t for t in vec))

    d2 = d1 = 0.0
    for v in range(n):
        if not nbrs[v]:
            continue
        mean = [sum(x[c, k] for c in nbrs[v]) / len(nbrs[v]) for k in range(x.shape[1])]
        d1 += norm([x[v, k] - mean[k] for k in range(x.shape[1])])
        for c in nbrs[v]:
            d2 += norm([x[v, k] - x[c, k] for k in range(x.shape[1])])
    return d2 / n_directed, d1 / n_directed


def edge_adj_oracle(edge_list) -> np.ndarray:
    """Dense boolean edge adjacency: ``i != j`` and the endpoint sets intersect."""
    ends = [set(map(int, e)) for e in edge_list]
    m = len(ends)
    out = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            out[i, j] = i != j and bool(ends[i] & ends[j])
    return out


def adr_formula_oracle(degrees, rates: list, weighting: bool = True) -> tuple[float, int, list[bool]]:
    """Shallow-to-deep retaining loss by direct arithmetic on plain lists (all nodes valid)."""
    top = max(degrees)
    w = [d / top if weighting else 1.0 for d in degrees]
    summ = [sum(s) / len(s) for s in rates]
    l_star = max(range(len(rates) - 1), key=lambda l: (summ[l], -l))
    loss, flags = 0.0, []
    for l in range(l_star, len(rates) - 1):
        on = summ[l] > summ[l + 1]
        flags.append(on)
        if on:
            loss += sum((w[v] * (rates[l + 1][v] - rates[l][v])) ** 2 for v in range(len(w)))
    return loss, l_star + 1, flags


def kl_oracle(p_target, logits) -> float:
    z = [math.exp(t - max(logits)) for t in logits]
    q = [t / sum(z) for t in z]
    return sum(a * math.log(a / b) for a, b in zip(p_target, q) if a > 0)


def logsumexp_ce_oracle(logits, labels, mask) -> float:
    total, count = 0.0, 0
    for row, y, m in zip(logits, labels, mask):
        if not m:
            continue
        top = max(row)
        lse = top + math.log(sum(math.exp(t - top) for t in row))
        total += lse - row[y]
        count += 1
    return total / count


def adam_scalar_trace(w0: float, grad: Callable[[float], float], lr: float, steps: int,
                      b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> list[float]:
    w, m, v, out = w0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(w)
    return out


def random_graph(rng: np.random.Generator, n: int, p: float) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


# numerical gradients --------------------------------------------------------------


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8), initial=0.0))


def grad_check(
    params: dict[str, np.ndarray],
    loss_fn: Callable[[], float],
    analytic: dict[str, np.ndarray],
    h: float = 1e-6,
    tol: float = 1e-5,
    name: str = "grad_check",
    max_entries: int | None = None,
    seed: int = 0,
) -> OracleReport:
    """Central differences on every entry (or a seeded sample) of ``params``.

    ``params`` holds the arrays that ``loss_fn`` reads; they are perturbed in
    place and restored.  ``analytic`` holds the gradients to check.
    """
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for key, arr in params.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            num[k] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic[key].reshape(-1)[idx], num))
        count += len(idx)
    return OracleReport(name, count, worst, tol)


@contextlib.contextmanager
def frozen_targets():
    """Record stop-gradient outputs on first use, replay them afterwards.

    Finite differences of a loss with stop-gradient targets must hold the
    targets fixed; otherwise the numerical derivative also moves the side the
    analytic gradient deliberately ignores.  The first call inside the block
    records; ``replay()`` rewinds so later calls return the recorded values in
    the same order.
    """
    from . import tensor as T

    original = T.stop_gradient
    saved: list[np.ndarray] = []
    cursor = [None]

    def patched(a, name=None):
        if cursor[0] is None:
            saved.append(a.value.copy())
            return original(a, name)
        value = saved[cursor[0]]
        cursor[0] += 1
        return original(T.Tensor(value), name)

    class Control:
        def replay(self):
            cursor[0] = 0

    T.stop_gradient = patched
    try:
        yield Control()
    finally:
        T.stop_gradient = original


# check suite -------------------------------------------------------------------


def check_ndr(trials: int = 100, seed: int = 0) -> OracleReport:
    from . import tensor as T
    from .distill import ndr
    from .graph import Graph

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 101))
        edges = random_graph(rng, n, float(rng.uniform(0.02, 0.3)))
        x = rng.normal(size=(n, int(rng.integers(1, 9))))
        ref, ref_valid = ndr_loop_oracle(n, edges, x)
        got = ndr(Graph.from_edges(n, edges), T.Tensor(x))
        worst = max(worst, float(np.max(np.abs(got.array - ref))), float(np.any(got.valid != ref_valid)))
    return OracleReport("ndr_loop", trials, worst, 1e-10)


def check_edge_adjacency(trials: int = 50, seed: int = 1) -> OracleReport:
    from .graph import EdgeIndexing, Graph, edge_adjacency

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 30))
        g = Graph.from_edges(n, random_graph(rng, n, float(rng.uniform(0.05, 0.5))))
        e = EdgeIndexing.from_graph(g)
        if e.n_edges > 200:
            continue
        ref = edge_adj_oracle([e.lookup(i) for i in range(e.n_edges)])
        worst = max(worst, float(np.sum(edge_adjacency(e).dense() != ref)))
    return OracleReport("edge_adjacency", trials, worst, 0.0)


def check_prop1(p: int, trials: int = 100, seed: int = 2) -> OracleReport:
    rng = np.random.default_rng(seed + p)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 40))
        edges = random_graph(rng, n, float(rng.uniform(0.05, 0.6)))
        d2, d1 = prop1_oracle(n, edges, rng.normal(size=(n, int(rng.integers(1, 6)))), p)
        worst = max(worst, d1 - d2)
    # deviation is the largest violation of d2 >= d1
    return OracleReport(f"prop1_p{p}", trials, max(worst, 0.0), 1e-12)


def check_total_loss_gradient(seed: int = 0) -> OracleReport:
    """Full objective on a 6-node, 3-layer toy with every term active."""
    from . import tensor as T
    from .graph import Graph, disjoint_union
    from .layers import GNN
    from .train import graph_objective

    rng = np.random.default_rng(seed)
    a = Graph.from_edges(3, [(0, 1), (1, 2)], features=rng.normal(size=(3, 4)))
    b = Graph.from_edges(3, [(0, 1), (0, 2)], features=rng.normal(size=(3, 4)))
    union = disjoint_union([a, b])
    labels = np.array([0, 1])
    cfg = _toy_config()
    model = GNN(cfg.model, 4, 2, "graph", seed, intermediate_head=True, learnable_transform=True)
    for p in model.params.values():
        p.value = p.value + rng.normal(scale=0.3, size=p.shape)

    with frozen_targets() as frozen:
        with T.Tape() as tape:
            fp = model.forward(union, training=False)
            total = graph_objective(model, union, labels, fp, cfg)[1]
        grads = tape.backward(total, model.params.values())

        def loss() -> float:
            frozen.replay()
            fp = model.forward(union, training=False)
            return graph_objective(model, union, labels, fp, cfg)[1].item()

        arrays = {k: p.value for k, p in model.params.items()}
        analytic = {k: grads[p] for k, p in model.params.items()}
        return grad_check(arrays, loss, analytic, name="total_loss_gradient")


def _toy_config():
    from .config import TrainConfig
    from .distill import DistillConfig
    from .layers import ModelConfig

    return TrainConfig(
        model=ModelConfig("sage", 3, 5, dropout=0.0, activation="elu"),
        distill=DistillConfig(alpha=1.0, beta=1.0, gamma=1.0, learnable_transform=True),
        task="graph",
    )


def run_checks(fast: bool = False) -> list[OracleReport]:
    scale = 5 if fast else 1
    return [
        check_ndr(100 // scale),
        check_edge_adjacency(50 // scale),
        check_prop1(1, 100 // scale),
        check_prop1(2, 100 // scale),
        check_total_loss_gradient(),
    ]

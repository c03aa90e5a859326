"""Teacher-free self-distillation objectives built on the neighbourhood discrepancy rate.

The discrepancy rate of node ``v`` at layer ``l`` is the cosine distance
between its embedding and the sum of its neighbours' embeddings,
``S_v = 1 - cos(X_v, (A X)_v)``.  Because cosine ignores magnitude the
degree normalisation of the neighbour mean is unnecessary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import ConfigError, EdgeIndexing, Graph, GraphBatch, UnionGraph, edge_adjacency, masked_adjacency
from .tensor import SparseMatrix, Tensor

DIRECTIONS = ("shallow2deep", "deep2shallow")
STATS = ("mean", "l2")


@dataclass
class DistillConfig:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    direction: str = "shallow2deep"
    degree_weighting: bool = True
    masked_ndr: bool = False
    learnable_transform: bool = False
    indicator_stat: str = "mean"

    def __post_init__(self):
        for k in ("alpha", "beta", "gamma"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be nonnegative")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if self.indicator_stat not in STATS:
            raise ConfigError(f"indicator_stat must be one of {STATS}")

    @property
    def enabled(self) -> bool:
        return self.alpha > 0 or self.beta > 0 or self.gamma > 0


@dataclass
class NdrVector:
    """Per-node discrepancy values (``N x 1`` tensor) with a validity mask."""

    values: Tensor
    valid: np.ndarray
    layer: int = 0

    @property
    def array(self) -> np.ndarray:
        return self.values.value[:, 0]

    def __len__(self) -> int:
        return len(self.valid)

    def summary(self, stat: str = "mean") -> float:
        v = self.array[self.valid]
        if len(v) == 0:
            return 0.0
        return float(v.mean()) if stat == "mean" else float(np.sqrt(np.sum(v * v)))

    def take(self, rows) -> "NdrVector":
        rows = np.asarray(rows)
        return NdrVector(T.take_rows(self.values, rows), self.valid[rows], self.layer)


def _ndr_with(adj: SparseMatrix, x: Tensor, layer: int) -> NdrVector:
    if adj.shape[1] != x.rows:
        raise T.DimensionError(f"adjacency {adj.shape} vs embeddings {x.shape}")
    s, valid = T.rowwise_cosine_distance(x, T.spmm(adj, x))
    return NdrVector(s, valid, layer)


def ndr(g: Graph | SparseMatrix, x: Tensor, layer: int = 0) -> NdrVector:
    """Neighbourhood discrepancy rate of every node; isolated nodes are invalid."""
    adj = g if isinstance(g, SparseMatrix) else g.adjacency
    return _ndr_with(adj, x, layer)


def ndr_masked(g: Graph, x: Tensor, layer: int = 0) -> NdrVector:
    """Discrepancy rate over the masked adjacency: same-class training pairs are ignored."""
    if isinstance(g, (GraphBatch, UnionGraph)):
        raise ConfigError("masked NDR is defined for node classification only")
    return _ndr_with(masked_adjacency(g), x, layer)


def edge_ndr(e: EdgeIndexing, edge_features: Tensor | None = None, layer: int = 0) -> NdrVector:
    """Edge-level discrepancy rate over the edge adjacency (edges sharing an endpoint)."""
    feats = edge_features if edge_features is not None else e.features
    if feats is None:
        raise ValueError("edge NDR needs edge features")
    feats = T.as_tensor(feats)
    if feats.rows != e.n_edges:
        raise T.DimensionError(f"{feats.rows} edge feature rows for {e.n_edges} edges")
    return _ndr_with(edge_adjacency(e), feats, layer)


def learnable_transform(x: Tensor, w_f: Tensor) -> Tensor:
    if x.cols != w_f.rows:
        raise T.DimensionError(f"transform {w_f.shape} on embeddings {x.shape}")
    return T.matmul(x, w_f)


@dataclass
class AdrReport:
    summaries: list[float]
    l_star: int
    # (target layer, online layer, indicator) for every pair from l* onwards
    pairs: list[tuple[int, int, bool]] = field(default_factory=list)
    loss: float = 0.0

    @property
    def active(self) -> list[tuple[int, int]]:
        return [(t, o) for t, o, on in self.pairs if on]

    @property
    def indicator_pattern(self) -> str:
        return "".join("1" if on else "0" for _, _, on in self.pairs)


def degree_weights(degrees: np.ndarray, enabled: bool = True) -> np.ndarray:
    """Degrees scaled by the maximum degree, or all ones when weighting is off."""
    degrees = np.asarray(degrees, dtype=np.float64)
    if not enabled:
        return np.ones_like(degrees)
    top = degrees.max() if len(degrees) else 0.0
    return degrees / top if top > 0 else np.zeros_like(degrees)


def adr_loss(
    g: Graph | np.ndarray,
    ndrs: list[NdrVector],
    cfg: DistillConfig,
    online: list[NdrVector] | None = None,
) -> tuple[Tensor, AdrReport]:
    """Adaptive discrepancy retaining regulariser.

    ``ndrs`` holds the rates of layers ``1..L``.  The shallowest layer with the
    largest summary (over ``1..L-1``) is the first target; from there every
    consecutive pair whose target summary exceeds the online summary adds the
    degree-weighted squared error between the online rates and the
    stop-gradient target rates.  ``deep2shallow`` runs the same rule over the
    layers in reverse order.  ``online``, when given, supplies the rates used
    on the online side (e.g. after a learnable transform); summaries always
    come from ``ndrs``.
    """
    n_layers = len(ndrs)
    if n_layers < 2:
        raise ValueError("ADR needs at least two layers")
    if online is not None and len(online) != n_layers:
        raise ValueError("online rates must cover the same layers")
    degrees = g if isinstance(g, np.ndarray) else g.degrees
    w = degree_weights(degrees, cfg.degree_weighting)
    summaries = [s.summary(cfg.indicator_stat) for s in ndrs]
    order = list(range(n_layers))
    if cfg.direction == "deep2shallow":
        order.reverse()
    seq_sum = [summaries[i] for i in order]
    k_star = int(np.argmax(seq_sum[:-1]))
    terms: list[Tensor] = []
    pairs: list[tuple[int, int, bool]] = []
    for k in range(k_star, n_layers - 1):
        t_idx, o_idx = order[k], order[k + 1]
        on = seq_sum[k] > seq_sum[k + 1]
        pairs.append((ndrs[t_idx].layer, ndrs[o_idx].layer, on))
        if not on:
            continue
        target = ndrs[t_idx]
        student = ndrs[o_idx] if online is None else online[o_idx]
        both = target.valid & student.valid & ndrs[o_idx].valid
        sg = T.stop_gradient(target.values, name=f"adr_target_l{target.layer}")
        diff = T.sub(student.values, sg)
        terms.append(T.sum_squares(T.mul(diff, (w * both)[:, None])))
    loss = _sum(terms)
    report = AdrReport(summaries, ndrs[order[k_star]].layer, pairs, loss.item())
    return loss, report


def adr_loss_batch(
    union: UnionGraph,
    ndrs: list[NdrVector],
    cfg: DistillConfig,
    online: list[NdrVector] | None = None,
) -> tuple[Tensor, list[AdrReport]]:
    """ADR evaluated per member graph of a disjoint union and averaged."""
    losses, reports = [], []
    for k, member in enumerate(union.members):
        rows = np.arange(union.offsets[k], union.offsets[k + 1])
        sub = [s.take(rows) for s in ndrs]
        sub_online = None if online is None else [s.take(rows) for s in online]
        loss, report = adr_loss(member, sub, cfg, sub_online)
        losses.append(loss)
        reports.append(report)
    return T.scale(_sum(losses), 1.0 / len(losses)), reports


def graph_embed_loss(readouts: list[Tensor], direction: str = "shallow2deep") -> Tensor:
    """``sum_l ||G^(l+1) - SG(G^(l))||^2`` averaged over the rows (graphs) of each readout."""
    if len(readouts) < 2:
        return T.Tensor(0.0)
    dims = {r.shape for r in readouts}
    if len(dims) != 1:
        raise ConfigError(f"graph embeddings differ in shape: {sorted(dims)}")
    seq = list(readouts) if direction == "shallow2deep" else list(reversed(readouts))
    terms = []
    for l in range(len(seq) - 1):
        sg = T.stop_gradient(seq[l], name=f"graph_target_{l}")
        d = T.sub(seq[l + 1], sg)
        terms.append(T.scale(T.sum_squares(d), 1.0 / d.rows))
    return _sum(terms)


def logit_loss(intermediate: list[Tensor], final: Tensor, mask=None) -> Tensor:
    """Mean over intermediate layers of ``KL(SG(softmax(final)) || softmax(intermediate))``."""
    if not intermediate:
        return T.Tensor(0.0)
    target = T.stop_gradient(T.softmax(final), name="logit_target")
    terms = []
    for z in intermediate:
        if z.shape != final.shape:
            raise T.DimensionError(f"intermediate logits {z.shape} vs final {final.shape}")
        terms.append(T.kl_to_target(target, z, mask))
    return T.scale(_sum(terms), 1.0 / len(terms))


def total_loss(ce: Tensor, l_l: Tensor, l_n: Tensor, l_g: Tensor, cfg: DistillConfig) -> Tensor:
    """``CE + alpha L_L + beta L_N + gamma L_G``; zero-weighted terms are left out."""
    out = ce
    for weight, term in ((cfg.alpha, l_l), (cfg.beta, l_n), (cfg.gamma, l_g)):
        if weight != 0:
            out = T.add(out, T.scale(term, weight))
    return out


def _sum(terms: list[Tensor]) -> Tensor:
    if not terms:
        return T.Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = T.add(out, t)
    return out


def layer_ndrs(g: Graph, hidden: list[Tensor], masked: bool = False) -> list[NdrVector]:
    """Rates of layers ``1..L`` from a forward pass's hidden states ``X^(0..L)``."""
    adj = masked_adjacency(g) if masked else g.adjacency
    return [_ndr_with(adj, x, l) for l, x in enumerate(hidden[1:], 1)]

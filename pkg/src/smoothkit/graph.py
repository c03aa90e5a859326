"""Graph data model, structural transforms, dataset ingestion and synthetic graphs."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .tensor import SparseMatrix

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConfigError(ValueError):
    pass


def _symmetric_adjacency(n: int, edges: np.ndarray) -> SparseMatrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return SparseMatrix.empty(n, n)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    m = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    return SparseMatrix.from_scipy(m)


def canonical_edges(edges, n: int | None = None) -> np.ndarray:
    """Undirected edge list as sorted unique ``(i, j)`` pairs with ``i < j``; self-loops dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if n is not None and len(e) and (e.min() < 0 or e.max() >= n):
        raise ValueError("edge endpoint out of range")
    return np.unique(e, axis=0) if len(e) else e


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with node features, labels and split masks.

    The adjacency is symmetric, 0/1 valued and never stores self-loops.
    """

    adjacency: SparseMatrix
    features: np.ndarray
    labels: np.ndarray | None = None
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    edge_features: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be square")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValueError(f"features must be {n} x d, got {feats.shape}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError("one label per node")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)
        masks = {}
        for k, m in self.masks.items():
            m = np.asarray(m, dtype=bool)
            if m.shape != (n,):
                raise ValueError(f"mask {k!r} must have length {n}")
            m.flags.writeable = False
            masks[k] = m
        names = list(masks)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                if np.any(masks[a] & masks[b]):
                    raise ValueError(f"masks {a!r} and {b!r} overlap")
        object.__setattr__(self, "masks", masks)

    @classmethod
    def from_edges(cls, n: int, edges, features=None, labels=None, masks=None, **kw) -> "Graph":
        if features is None:
            features = np.ones((n, 1))
        return cls(_symmetric_adjacency(n, canonical_edges(edges, n)), features, labels, dict(masks or {}), **kw)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.row_nnz().astype(np.float64)

    @cached_property
    def edges(self) -> np.ndarray:
        """Canonical ``M x 2`` edge list, ``i < j``, lexicographically sorted."""
        rows = self.adjacency.row_ids()
        cols = self.adjacency.indices
        keep = rows < cols
        return np.stack([rows[keep], cols[keep]], axis=1)

    @cached_property
    def gcn_propagation(self) -> SparseMatrix:
        """``D^-1/2 (A + I) D^-1/2``."""
        a = self.adjacency.csr + sp.identity(self.n_nodes, format="csr")
        d = np.asarray(a.sum(axis=1)).ravel() ** -0.5
        return SparseMatrix.from_scipy(sp.diags(d) @ a @ sp.diags(d))

    @cached_property
    def mean_aggregation(self) -> SparseMatrix:
        """``D^-1 A`` with zero rows for isolated nodes."""
        deg = self.degrees
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return SparseMatrix.from_scipy(sp.diags(inv) @ self.adjacency.csr)

    @cached_property
    def with_self_loops(self) -> SparseMatrix:
        a = self.adjacency.csr + sp.identity(self.n_nodes, format="csr")
        return SparseMatrix.from_scipy(a)

    @cached_property
    def sparse_features(self) -> SparseMatrix:
        return SparseMatrix.from_scipy(sp.csr_matrix(self.features))

    @cached_property
    def feature_density(self) -> float:
        return float(np.count_nonzero(self.features)) / max(self.features.size, 1)

    def mask(self, split: str) -> np.ndarray:
        if split not in self.masks:
            raise KeyError(f"graph has no {split!r} mask")
        return self.masks[split]

    def replace(self, **changes) -> "Graph":
        kw = dict(
            adjacency=self.adjacency,
            features=self.features,
            labels=self.labels,
            masks=self.masks,
            edge_features=self.edge_features,
            name=self.name,
        )
        kw.update(changes)
        return Graph(**kw)

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        e = inv[self.edges]
        return Graph.from_edges(
            self.n_nodes,
            e,
            self.features[perm],
            None if self.labels is None else self.labels[perm],
            {k: m[perm] for k, m in self.masks.items()},
            name=self.name,
        )

    # canonical JSON -------------------------------------------------------

    def to_json(self) -> dict:
        out = {
            "n": self.n_nodes,
            "edges": self.edges.tolist(),
            "features": self.features.tolist(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "masks": {k: np.flatnonzero(m).tolist() for k, m in self.masks.items()},
        }
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Graph":
        try:
            n = int(obj["n"])
            edges = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2)
            features = np.asarray(obj["features"], dtype=np.float64).reshape(n, -1)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad graph JSON: {exc}") from exc
        if len(edges) and np.any(edges[:, 0] >= edges[:, 1]):
            raise FormatError("graph JSON edges must be listed with i < j")
        labels = obj.get("labels")
        masks = {}
        for k, idx in (obj.get("masks") or {}).items():
            m = np.zeros(n, dtype=bool)
            m[np.asarray(idx, dtype=np.int64)] = True
            masks[k] = m
        return cls.from_edges(n, edges, features, None if labels is None else np.asarray(labels), masks)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Graph":
        return cls.from_json(json.loads(Path(path).read_text()))


def structurally_equal(a: Graph, b: Graph) -> bool:
    same = (
        a.n_nodes == b.n_nodes
        and np.array_equal(a.edges, b.edges)
        and np.array_equal(a.features, b.features)
        and set(a.masks) == set(b.masks)
        and all(np.array_equal(a.masks[k], b.masks[k]) for k in a.masks)
    )
    if a.labels is None or b.labels is None:
        return same and a.labels is None and b.labels is None
    return same and np.array_equal(a.labels, b.labels)


# graph classification -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """A graph-classification dataset: graphs, one label each, fold ids in 0..n_folds-1."""

    graphs: list[Graph]
    labels: np.ndarray
    folds: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.graphs),):
            raise ValueError("one label per graph")
        object.__setattr__(self, "labels", labels)
        if self.folds is not None:
            folds = np.asarray(self.folds, dtype=np.int64)
            if folds.shape != labels.shape or folds.min() < 0:
                raise ValueError("fold ids must be nonnegative, one per graph")
            object.__setattr__(self, "folds", folds)

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def n_features(self) -> int:
        return self.graphs[0].n_features

    def assign_folds(self, n_folds: int = 10, seed: int = 0) -> "GraphBatch":
        """Random balanced fold assignment: a seeded permutation dealt round-robin."""
        if len(self.graphs) < n_folds:
            raise ValueError(f"{len(self.graphs)} graphs cannot fill {n_folds} folds")
        order = np.random.default_rng(seed).permutation(len(self.graphs))
        folds = np.empty(len(self.graphs), dtype=np.int64)
        folds[order] = np.arange(len(self.graphs)) % n_folds
        return GraphBatch(self.graphs, self.labels, folds, self.name)

    def to_json(self) -> dict:
        return {
            "graphs": [g.to_json() for g in self.graphs],
            "labels": self.labels.tolist(),
            "folds": None if self.folds is None else self.folds.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GraphBatch":
        graphs = [Graph.from_json(g) for g in obj["graphs"]]
        folds = obj.get("folds")
        return cls(graphs, np.asarray(obj["labels"]), None if folds is None else np.asarray(folds))


@dataclass(frozen=True, eq=False)
class UnionGraph:
    """Disjoint union of several graphs; node block ``k`` is ``offsets[k]:offsets[k+1]``."""

    graph: Graph
    offsets: np.ndarray
    members: list[Graph]

    @property
    def n_graphs(self) -> int:
        return len(self.offsets) - 1


def disjoint_union(graphs: list[Graph]) -> UnionGraph:
    sizes = [g.n_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    adj = SparseMatrix.from_scipy(sp.block_diag([g.adjacency.csr for g in graphs], format="csr"))
    feats = np.concatenate([g.features for g in graphs], axis=0)
    return UnionGraph(Graph(adj, feats), offsets, graphs)


# structural transforms ------------------------------------------------------


def masked_adjacency(g: Graph) -> SparseMatrix:
    """Adjacency without edges whose endpoints are both training nodes of the same class.

    Edges touching a node without a training label are kept.
    """
    if isinstance(g, GraphBatch):
        raise ConfigError("masked adjacency is defined for node classification only")
    if g.labels is None or "train" not in g.masks:
        raise ConfigError("masked adjacency needs labels and a train mask")
    rows = g.adjacency.row_ids()
    cols = g.adjacency.indices
    known = g.masks["train"]
    drop = known[rows] & known[cols] & (g.labels[rows] == g.labels[cols])
    keep = ~drop
    return SparseMatrix.from_coo(rows[keep], cols[keep], np.ones(keep.sum()), g.adjacency.shape)


@dataclass(frozen=True, eq=False)
class EdgeIndexing:
    """Stable edge ids ``0..M-1`` over a canonical ``(i < j)`` edge list."""

    endpoints: np.ndarray
    n_nodes: int
    features: np.ndarray | None = None

    @classmethod
    def from_graph(cls, g: Graph, features=None) -> "EdgeIndexing":
        feats = g.edge_features if features is None else features
        return cls(g.edges, g.n_nodes, None if feats is None else np.asarray(feats, dtype=np.float64))

    @property
    def n_edges(self) -> int:
        return len(self.endpoints)

    def lookup(self, edge_id: int) -> tuple[int, int]:
        i, j = self.endpoints[edge_id]
        return int(i), int(j)


def edge_adjacency(e: EdgeIndexing) -> SparseMatrix:
    """``M x M`` matrix with 1 where two distinct edges share an endpoint."""
    m = e.n_edges
    if m == 0:
        return SparseMatrix.empty(0, 0)
    ids = np.arange(m)
    inc = sp.csr_matrix(
        (np.ones(2 * m), (np.concatenate([ids, ids]), e.endpoints.T.ravel())),
        shape=(m, e.n_nodes),
    )
    shared = (inc @ inc.T).tocoo()
    keep = shared.row != shared.col
    return SparseMatrix.from_coo(shared.row[keep], shared.col[keep], np.ones(keep.sum()), (m, m))


def drop_edge(g: Graph, ratio: float, seed) -> Graph:
    """Remove ``floor(ratio * M)`` undirected edges uniformly without replacement."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"drop ratio must be in [0, 1), got {ratio}")
    n_drop = int(np.floor(ratio * g.n_edges))
    if n_drop == 0:
        return g
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = np.sort(rng.permutation(g.n_edges)[n_drop:])
    return g.replace(adjacency=_symmetric_adjacency(g.n_nodes, g.edges[keep]))


# synthetic data -------------------------------------------------------------


def planetoid_masks(labels: np.ndarray, per_class: int = 20, n_val: int = 500, n_test: int = 1000, order=None):
    """First ``per_class`` nodes of each class (in ``order``) train, then ``n_val`` val, ``n_test`` test."""
    n = len(labels)
    order = np.arange(n) if order is None else np.asarray(order)
    train = np.zeros(n, dtype=bool)
    seen: dict[int, int] = {}
    for v in order:
        c = int(labels[v])
        if seen.get(c, 0) < per_class:
            train[v] = True
            seen[c] = seen.get(c, 0) + 1
    rest = [v for v in order if not train[v]]
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:n_val]] = True
    test[rest[n_val : n_val + n_test]] = True
    return {"train": train, "val": val, "test": test}


def sbm_generate(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    seed: int,
    noise: float = 1.0,
) -> Graph:
    """Stochastic block model with block-id labels.

    Features are the one-hot of the block id (modulo ``feat_dim``) plus
    Gaussian noise.  20 nodes per class train; the remaining nodes are split
    evenly into validation and test in a seeded random order.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    feats = np.zeros((n, feat_dim))
    feats[np.arange(n), labels % feat_dim] = 1.0
    feats += noise * rng.standard_normal((n, feat_dim))
    train = np.zeros(n, dtype=bool)
    for c in range(blocks):
        train[np.flatnonzero(labels == c)[:20]] = True
    rest = rng.permutation(np.flatnonzero(~train))
    half = len(rest) // 2
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:half]] = True
    test[rest[half:]] = True
    masks = {"train": train, "val": val, "test": test}
    return Graph.from_edges(n, edges, feats, labels, masks, name=f"sbm{blocks}x{nodes_per_block}")


# raw dataset formats --------------------------------------------------------


def load_citation(content_path: str | Path, cites_path: str | Path, per_class: int = 20, n_val: int = 500, n_test: int = 1000) -> Graph:
    """Read a ``.content`` / ``.cites`` citation dataset.

    Features are row-normalised bag-of-words; classes are numbered in sorted
    name order.  Citations naming an unknown paper are skipped with a warning.
    """
    ids: dict[str, int] = {}
    rows: list[np.ndarray] = []
    classes: list[str] = []
    width = None
    with open(content_path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 3:
                raise FormatError("expected <id> <features...> <class>", content_path, lineno)
            if width is None:
                width = len(parts) - 2
            elif len(parts) - 2 != width:
                raise FormatError(f"expected {width} features, got {len(parts) - 2}", content_path, lineno)
            if parts[0] in ids:
                raise FormatError(f"duplicate paper id {parts[0]}", content_path, lineno)
            try:
                rows.append(np.asarray(parts[1:-1], dtype=np.float64))
            except ValueError as exc:
                raise FormatError(f"non-numeric feature: {exc}", content_path, lineno) from None
            ids[parts[0]] = len(ids)
            classes.append(parts[-1])
    if not ids:
        raise FormatError("no nodes", content_path)
    names = sorted(set(classes))
    labels = np.array([names.index(c) for c in classes])
    feats = np.vstack(rows)
    sums = feats.sum(axis=1, keepdims=True)
    feats = np.divide(feats, sums, out=np.zeros_like(feats), where=sums != 0)

    edges = []
    dangling = 0
    with open(cites_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError("expected <cited> <citing>", cites_path, lineno)
            a, b = ids.get(parts[0]), ids.get(parts[1])
            if a is None or b is None:
                dangling += 1
                continue
            edges.append((a, b))
    if dangling:
        log.warning("skipped %d citations with unknown paper ids", dangling)
    masks = planetoid_masks(labels, per_class, n_val, n_test)
    return Graph.from_edges(len(ids), np.asarray(edges).reshape(-1, 2), feats, labels, masks, name=Path(content_path).stem)


def _read_table(path: Path, dtype=float, sep=","):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append([dtype(x) for x in line.replace(sep, " ").split()])
            except ValueError:
                raise FormatError(f"cannot parse {line!r}", path, lineno) from None
    return out


def load_tu(dataset_dir: str | Path, name: str) -> GraphBatch:
    """Read a TU graph-kernel dataset (``NAME_A.txt``, ``NAME_graph_indicator.txt``, ...)."""
    root = Path(dataset_dir)
    required = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for path in required.values():
        if not path.exists():
            raise FileNotFoundError(f"missing TU file {path}")
    indicator = np.array([r[0] for r in _read_table(required["graph_indicator"], int)], dtype=np.int64)
    graph_labels_raw = np.array([r[0] for r in _read_table(required["graph_labels"], int)], dtype=np.int64)
    edges = np.array(_read_table(required["A"], int), dtype=np.int64).reshape(-1, 2) - 1
    n_total = len(indicator)
    if len(edges) and (edges.min() < 0 or edges.max() >= n_total):
        raise FormatError("edge endpoint outside node range", required["A"])
    if np.any(np.diff(indicator) < 0):
        raise FormatError("graph indicator must be nondecreasing", required["graph_indicator"])
    gids = np.unique(indicator)
    if len(gids) != len(graph_labels_raw):
        raise FormatError(f"{len(gids)} graphs but {len(graph_labels_raw)} labels", required["graph_labels"])

    feats = None
    attr_path = root / f"{name}_node_attributes.txt"
    if attr_path.exists():
        attrs = _read_table(attr_path, float)
        if attrs:
            if len(attrs) != n_total:
                raise FormatError(f"{len(attrs)} attribute rows for {n_total} nodes", attr_path)
            feats = np.asarray(attrs, dtype=np.float64)
    nl_path = root / f"{name}_node_labels.txt"
    if feats is None and nl_path.exists():
        node_labels = np.array([r[0] for r in _read_table(nl_path, int)], dtype=np.int64)
        if len(node_labels) != n_total:
            raise FormatError(f"{len(node_labels)} node labels for {n_total} nodes", nl_path)
        values = np.unique(node_labels)
        feats = (node_labels[:, None] == values[None, :]).astype(np.float64)
    if feats is None:
        feats = np.ones((n_total, 1))

    for lineno, (i, j) in enumerate(edges, 1):
        if indicator[i] != indicator[j]:
            raise FormatError(f"edge ({i + 1}, {j + 1}) crosses graph boundary", required["A"], lineno)
    starts = np.searchsorted(indicator, gids)
    stops = np.append(starts[1:], n_total)
    edge_graph = indicator[edges[:, 0]] if len(edges) else np.array([], dtype=np.int64)
    graphs = []
    for gid, lo, hi in zip(gids, starts, stops):
        e = edges[edge_graph == gid] - lo
        graphs.append(Graph.from_edges(int(hi - lo), e, feats[lo:hi], name=f"{name}#{gid}"))
    label_values = np.unique(graph_labels_raw)
    labels = np.searchsorted(label_values, graph_labels_raw)
    return GraphBatch(graphs, labels, name=name)


def write_tu(batch: GraphBatch, dataset_dir: str | Path, name: str, node_labels=None) -> None:
    """Write ``batch`` in TU text format; features go to ``NAME_node_attributes.txt`` unless ``node_labels`` given."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, attr_lines = [], [], []
    offset = 0
    for k, g in enumerate(batch.graphs, 1):
        for i, j in g.edges:
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_lines.extend([str(k)] * g.n_nodes)
        attr_lines.extend(", ".join(repr(float(x)) for x in row) for row in g.features)
        offset += g.n_nodes
    (root / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (root / f"{name}_graph_labels.txt").write_text("\n".join(str(int(y)) for y in batch.labels) + "\n")
    if node_labels is not None:
        (root / f"{name}_node_labels.txt").write_text("\n".join(str(int(x)) for x in node_labels) + "\n")
    else:
        (root / f"{name}_node_attributes.txt").write_text("\n".join(attr_lines) + "\n")

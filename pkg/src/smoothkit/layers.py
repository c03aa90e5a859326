"""GNN layers (GCN, GraphSage-mean, GAT), readouts, prediction heads and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .graph import ConfigError, Graph, UnionGraph
from .tensor import SparseMatrix, Tensor

BACKBONES = ("gcn", "sage", "gat")
READOUTS = ("mean", "sum", "max")
DEFAULT_ACTIVATION = {"gcn": "relu", "sage": "relu", "gat": "elu"}


@dataclass
class ModelConfig:
    backbone: str = "gcn"
    n_layers: int = 2
    hidden_dim: int = 64
    n_heads: int = 1
    dropout: float = 0.5
    activation: str | None = None
    readout: str = "mean"
    # dropout on GAT attention coefficients; None follows ``dropout``
    attn_dropout: float | None = None
    # where X^(l) is captured for NDR: "post" (after the nonlinearity) or "pre"
    capture: str = "post"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.attn_dropout is not None and not 0.0 <= self.attn_dropout < 1.0:
            raise ConfigError("attn_dropout must be in [0, 1)")
        if self.readout not in READOUTS:
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.capture not in ("post", "pre"):
            raise ConfigError("capture must be 'post' or 'pre'")
        if self.backbone == "gat" and self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by {self.n_heads} heads")
        if self.activation is None:
            self.activation = DEFAULT_ACTIVATION[self.backbone]
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


ACTIVATIONS = {
    "relu": T.relu,
    "elu": T.elu,
    "leaky_relu": T.leaky_relu,
    "identity": lambda t: t,
}


def _project(x, w: Tensor) -> Tensor:
    if isinstance(x, SparseMatrix):
        return T.spmm(x, w)
    return T.matmul(x, w)


def _bias(z: Tensor, b: Tensor | None) -> Tensor:
    return z if b is None else T.add(z, b)


def _act(z: Tensor, activation) -> Tensor:
    if activation is None:
        return z
    if isinstance(activation, str):
        activation = ACTIVATIONS[activation]
    return activation(z)


def _cols(x) -> int:
    return x.shape[1]


def gcn_forward(g: Graph, x, w: Tensor, b: Tensor | None = None, activation="relu") -> Tensor:
    """``act(D^-1/2 (A+I) D^-1/2 X W + b)``."""
    if _cols(x) != w.rows or x.shape[0] != g.n_nodes:
        raise T.DimensionError(f"gcn: X {x.shape}, W {w.shape}, N={g.n_nodes}")
    return _act(_bias(T.spmm(g.gcn_propagation, _project(x, w)), b), activation)


def sage_forward(g: Graph, x, w_self: Tensor, w_neigh: Tensor, b: Tensor | None = None, activation="relu") -> Tensor:
    """``act(X W_self + D^-1 A X W_neigh + b)``; isolated nodes keep only the self term."""
    if _cols(x) != w_self.rows or w_self.shape != w_neigh.shape or x.shape[0] != g.n_nodes:
        raise T.DimensionError(f"sage: X {x.shape}, W_self {w_self.shape}, W_neigh {w_neigh.shape}")
    z = T.add(_project(x, w_self), T.spmm(g.mean_aggregation, _project(x, w_neigh)))
    return _act(_bias(z, b), activation)


def gat_forward(
    g: Graph,
    x,
    w: Tensor,
    attn: tuple[Tensor, Tensor],
    n_heads: int,
    b: Tensor | None = None,
    final: bool = False,
    activation="elu",
    attn_dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head attention over neighbours plus self.

    Hidden layers concatenate heads and apply ``activation``; the final layer
    averages heads and returns raw scores.
    """
    if _cols(x) != w.rows or x.shape[0] != g.n_nodes:
        raise T.DimensionError(f"gat: X {x.shape}, W {w.shape}")
    h = _project(x, w)
    z = T.gat_attention(h, attn[0], attn[1], g.with_self_loops, n_heads, dropout=attn_dropout, rng=rng)
    if final:
        return _bias(T.head_mean(z, n_heads), b)
    return _act(_bias(z, b), activation)


def readout(x: Tensor, kind: str = "mean") -> Tensor:
    """Permutation-invariant ``1 x d`` summary of the rows of ``x``."""
    if x.rows == 0:
        raise T.DimensionError("readout of an empty graph")
    if kind == "mean":
        return T.mean_rows(x)
    if kind == "sum":
        return T.sum_rows(x)
    if kind == "max":
        return T.max_rows(x)
    raise ValueError(f"unknown readout {kind!r}")


def batch_readout(x: Tensor, offsets, kind: str = "mean") -> Tensor:
    """One readout row per graph of a disjoint union."""
    return T.segment_reduce(x, offsets, kind)


@dataclass
class MLPHead:
    """Two-layer perceptron ``relu(X W1 + b1) W2 + b2``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def in_dim(self) -> int:
        return self.w1.rows

    def __call__(self, x: Tensor) -> Tensor:
        if x.cols != self.in_dim:
            raise ConfigError(f"head expects {self.in_dim} input columns, got {x.cols}")
        h = T.relu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)


def intermediate_logits(x_l: Tensor, head: MLPHead, kind: str = "mean", task: str = "node", offsets=None) -> Tensor:
    """Shared-head logits for an intermediate layer: per node, or per graph after readout."""
    if task == "node":
        return head(x_l)
    pooled = readout(x_l, kind) if offsets is None else batch_readout(x_l, offsets, kind)
    return head(pooled)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class ForwardPass:
    hidden: list[Tensor]
    logits: Tensor
    intermediate: list[Tensor] = field(default_factory=list)
    readouts: list[Tensor] = field(default_factory=list)


class GNN:
    """A stack of ``n_layers`` message-passing layers plus task heads.

    Node task: layers ``1..L-1`` are ``hidden_dim`` wide and layer ``L`` emits
    class scores, so ``X^(L)`` are the logits.  Graph task: all ``L`` layers are
    ``hidden_dim`` wide and a two-layer classifier reads out ``X^(L)``.
    ``params`` is an ordered name -> Tensor mapping.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        n_features: int,
        n_classes: int,
        task: str = "node",
        seed: int = 0,
        intermediate_head: bool = False,
        learnable_transform: bool = False,
    ):
        if task not in ("node", "graph"):
            raise ConfigError(f"unknown task {task!r}")
        self.cfg = cfg
        self.n_features = n_features
        self.n_classes = n_classes
        self.task = task
        self.seed = seed
        self.has_intermediate_head = intermediate_head
        self.has_transform = learnable_transform
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        dims = self.layer_dims()
        for l, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), 1):
            final = task == "node" and l == cfg.n_layers
            if cfg.backbone == "gcn":
                self._add(f"layer{l}.w", glorot(rng, d_in, d_out))
                self._add(f"layer{l}.b", np.zeros((1, d_out)))
            elif cfg.backbone == "sage":
                self._add(f"layer{l}.w_self", glorot(rng, d_in, d_out))
                self._add(f"layer{l}.w_neigh", glorot(rng, d_in, d_out))
                self._add(f"layer{l}.b", np.zeros((1, d_out)))
            else:
                k = cfg.n_heads
                f = d_out if final else d_out // k
                self._add(f"layer{l}.w", glorot(rng, d_in, k * f))
                self._add(f"layer{l}.attn_src", glorot(rng, f, 1, (k, f)))
                self._add(f"layer{l}.attn_dst", glorot(rng, f, 1, (k, f)))
                self._add(f"layer{l}.b", np.zeros((1, d_out if final else k * f)))
        h = cfg.hidden_dim
        if task == "graph":
            self._add("classifier.w1", glorot(rng, h, h))
            self._add("classifier.b1", np.zeros((1, h)))
            self._add("classifier.w2", glorot(rng, h, n_classes))
            self._add("classifier.b2", np.zeros((1, n_classes)))
        if intermediate_head:
            self._add("inter.w1", glorot(rng, h, h))
            self._add("inter.b1", np.zeros((1, h)))
            self._add("inter.w2", glorot(rng, h, n_classes))
            self._add("inter.b2", np.zeros((1, n_classes)))
        if learnable_transform:
            for l in range(1, cfg.n_layers + 1):
                self._add(f"transform{l}", np.eye(dims[l]))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = T.parameter(value, name=name)

    def layer_dims(self) -> list[int]:
        c = self.cfg
        dims = [self.n_features] + [c.hidden_dim] * c.n_layers
        if self.task == "node":
            dims[-1] = self.n_classes
        return dims

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def head(self, prefix: str) -> MLPHead:
        p = self.params
        return MLPHead(p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def transform(self, layer: int) -> Tensor | None:
        return self.params.get(f"transform{layer}")

    def _layer(self, l: int, g: Graph, x, final: bool, rng=None) -> tuple[Tensor, Tensor]:
        """Returns ``(pre_activation, output)`` of layer ``l``."""
        c, p = self.cfg, self.params
        if c.backbone == "gcn":
            pre = gcn_forward(g, x, p[f"layer{l}.w"], p[f"layer{l}.b"], activation=None)
        elif c.backbone == "sage":
            pre = sage_forward(g, x, p[f"layer{l}.w_self"], p[f"layer{l}.w_neigh"], p[f"layer{l}.b"], activation=None)
        else:
            attn = (p[f"layer{l}.attn_src"], p[f"layer{l}.attn_dst"])
            rate = c.dropout if c.attn_dropout is None else c.attn_dropout
            pre = gat_forward(
                g, x, p[f"layer{l}.w"], attn, c.n_heads, p[f"layer{l}.b"], final=final, activation=None,
                attn_dropout=rate if rng is not None else 0.0, rng=rng,
            )
        out = pre if final else _act(pre, c.activation)
        return pre, out

    def forward(
        self,
        graph: Graph | UnionGraph,
        training: bool = False,
        rng: np.random.Generator | None = None,
        intermediate: bool = True,
    ) -> ForwardPass:
        """``intermediate=False`` skips the shared intermediate-logit head (evaluation only needs the logits)."""
        c = self.cfg
        offsets = None
        if isinstance(graph, UnionGraph):
            offsets = graph.offsets
            graph = graph.graph
        if training and c.dropout > 0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")
        x0 = Tensor(graph.features)
        hidden = [x0]
        sparse_input = graph.feature_density < 0.1
        x = graph.sparse_features if sparse_input else x0
        if training and c.dropout > 0:
            x = _sparse_dropout(x, c.dropout, rng) if sparse_input else T.dropout(x0, c.dropout, rng)
        for l in range(1, c.n_layers + 1):
            final = self.task == "node" and l == c.n_layers
            pre, out = self._layer(l, graph, x, final, rng if training else None)
            hidden.append(pre if c.capture == "pre" else out)
            x = T.dropout(out, c.dropout, rng, training) if l < c.n_layers else out
        readouts: list[Tensor] = []
        if self.task == "graph":
            pool = (lambda t: readout(t, c.readout)) if offsets is None else (lambda t: batch_readout(t, offsets, c.readout))
            readouts = [pool(t) for t in hidden[1:]]
            logits = self.head("classifier")(readouts[-1])
        else:
            logits = out
        inter_logits: list[Tensor] = []
        if intermediate and self.has_intermediate_head:
            head = self.head("inter")
            for l in range(1, c.n_layers):
                if self.task == "graph":
                    inter_logits.append(head(readouts[l - 1]))
                else:
                    inter_logits.append(intermediate_logits(hidden[l], head, c.readout, "node"))
        return ForwardPass(hidden, logits, inter_logits, readouts)

    def predict(self, graph) -> np.ndarray:
        return self.forward(graph, training=False, intermediate=False).logits.value.argmax(axis=1)

    # persistence ----------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.value.shape:
                raise T.DimensionError(f"{k}: checkpoint {state[k].shape} vs model {p.value.shape}")
            p.value = np.array(state[k], dtype=np.float64)

    def manifest(self) -> dict:
        return {
            "model": asdict(self.cfg),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "task": self.task,
            "seed": self.seed,
            "intermediate_head": self.has_intermediate_head,
            "learnable_transform": self.has_transform,
        }


def _sparse_dropout(x: SparseMatrix, rate: float, rng: np.random.Generator) -> SparseMatrix:
    keep = rng.random(x.nnz) >= rate
    return SparseMatrix(x.indptr, x.indices, x.data * keep / (1.0 - rate), x.shape)


def save_checkpoint(model: GNN, path: str | Path, epoch: int = 0, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64 blob)."""
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    blob = path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for name, p in model.params.items():
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset, "count": int(p.value.size)})
        chunks.append(p.value.astype("<f8").ravel())
        offset += p.value.size
    blob.write_bytes(np.concatenate(chunks).tobytes() if chunks else b"")
    manifest = model.manifest() | {"epoch": epoch, "blob": blob.name, "tensors": tensors}
    if extra:
        manifest["extra"] = extra
    out = path.with_suffix(".json")
    out.write_text(json.dumps(manifest, indent=2))
    return out


def load_checkpoint(path: str | Path) -> tuple[GNN, dict]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    manifest = json.loads(path.read_text())
    cfg = ModelConfig(**manifest["model"])
    model = GNN(
        cfg,
        manifest["n_features"],
        manifest["n_classes"],
        manifest["task"],
        manifest.get("seed", 0),
        manifest.get("intermediate_head", False),
        manifest.get("learnable_transform", False),
    )
    flat = np.frombuffer((path.parent / manifest["blob"]).read_bytes(), dtype="<f8")
    state = {}
    for t in manifest["tensors"]:
        state[t["name"]] = flat[t["offset"] : t["offset"] + t["count"]].reshape(t["shape"]).copy()
    model.load_state(state)
    return model, manifest

"""Dense 64-bit matrices with a define-by-run reverse-mode gradient tape.

Every operation returns a new :class:`Tensor`.  When a :class:`Tape` is active
(``with Tape() as tape:``) operations touching a differentiable input are
recorded on it and ``tape.backward(loss)`` accumulates adjoints in reverse
recording order.  Outside a tape operations only compute values, which is what
evaluation passes use.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    pass


_local = threading.local()
_ids = itertools.count()


def current_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Row-major 2-D float64 matrix, optionally a node on the active tape."""

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "node_id", "op", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.node_id: int | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor({self.op}{tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class Tape:
    """Ordered record of operations for one forward pass.

    ``contributions`` is filled by :meth:`backward` with the max-abs adjoint
    each node pushed into each of its inputs, keyed by
    ``(node_id, input_position)``.  Stop-gradient nodes record exactly 0.
    """

    nodes: list[Tensor] = field(default_factory=list)
    adjoints: dict[int, np.ndarray] = field(default_factory=dict)
    contributions: dict[tuple[int, int], float] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: Tensor) -> None:
        out.node_id = next(_ids)
        self.nodes.append(out)

    def adjoint(self, t: Tensor) -> np.ndarray:
        """Adjoint of ``t`` from the last backward call (zeros if none reached it)."""
        key = t.node_id if t.node_id is not None else id(t)
        g = self.adjoints.get(key)
        return np.zeros_like(t.value) if g is None else g

    def nodes_of(self, op: str) -> list[Tensor]:
        return [n for n in self.nodes if n.op == op]

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
        """Reverse pass from a scalar ``loss``; returns ``{leaf: gradient}``.

        Leaves are the ``requires_grad`` inputs reached from ``loss``; when
        ``params`` is given every listed tensor gets an entry (zeros if the
        loss does not depend on it).
        """
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss is not on the tape")
        self.adjoints = {}
        self.contributions = {}

        def key(t: Tensor) -> int:
            return t.node_id if t.node_id is not None else id(t)

        self.adjoints[key(loss)] = np.ones((1, 1))
        leaves: dict[int, Tensor] = {}
        if loss.node_id is None:
            leaves[key(loss)] = loss
        for node in reversed(self.nodes):
            g = self.adjoints.get(node.node_id)
            if g is None:
                continue
            grads = node.backward_fn(g)
            for pos, (parent, pg) in enumerate(zip(node.parents, grads)):
                if not parent.requires_grad:
                    continue
                if pg is None:
                    self.contributions[(node.node_id, pos)] = 0.0
                    continue
                self.contributions[(node.node_id, pos)] = float(np.max(np.abs(pg))) if pg.size else 0.0
                k = key(parent)
                if k in self.adjoints:
                    self.adjoints[k] = self.adjoints[k] + pg
                else:
                    self.adjoints[k] = pg
                if parent.node_id is None:
                    leaves[k] = parent
        out = {t: self.adjoints[k] for k, t in leaves.items()}
        if params is not None:
            for p in params:
                if p not in out:
                    out[p] = np.zeros_like(p.value)
        return out


def _make(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str, name: str | None = None) -> Tensor:
    out = Tensor(value, name=name)
    out.op = op
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum(keepdims=True).reshape(1, 1)
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    raise DimensionError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    ok = a.shape == b.shape or a.shape == (1, 1) or b.shape == (1, 1)
    if not ok:
        (ra, ca), (rb, cb) = a.shape, b.shape
        ok = (ca == cb and 1 in (ra, rb)) or (ra == rb and 1 in (ca, cb))
    if not ok:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _make(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    d = slope + (1.0 - slope) * (a.value > 0)
    return _make(a.value * d, (a,), lambda g: (g * d,), "leaky_relu")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.value
    e = np.exp(np.minimum(x, 0.0))
    out = np.maximum(x, 0.0) + alpha * (e - 1.0)
    d = alpha * e if alpha == 1.0 else alpha * e + (1.0 - alpha) * (x > 0)
    return _make(out, (a,), lambda g: (g * d,), "elu")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.value * keep, (a,), lambda g: (g * keep,), "dropout")


def stop_gradient(a: Tensor, name: str | None = None) -> Tensor:
    """Identity forward; blocks every adjoint from flowing into ``a``."""
    return _make(a.value.copy(), (a,), lambda g: (None,), "stop_gradient", name=name)


# linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


class SparseMatrix:
    """CSR matrix: ``indptr`` row offsets, sorted ``indices`` per row, ``data`` values."""

    __slots__ = ("shape", "indptr", "indices", "data", "__dict__")

    def __init__(self, indptr, indices, data, shape: tuple[int, int]):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        self.shape = (int(shape[0]), int(shape[1]))
        n_rows, n_cols = self.shape
        if self.indptr.shape != (n_rows + 1,) or self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise ValueError("malformed CSR row offsets")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("CSR row offsets must be nondecreasing")
        if len(self.data) != len(self.indices):
            raise ValueError("CSR data and indices differ in length")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n_cols):
            raise ValueError("CSR column index out of bounds")
        if len(self.indices) > 1:
            d = np.diff(self.indices)
            row_starts = np.zeros(len(self.indices), dtype=bool)
            row_starts[self.indptr[1:-1][self.indptr[1:-1] < len(self.indices)]] = True
            if np.any((d <= 0) & ~row_starts[1:]):
                raise ValueError("CSR column indices must be strictly increasing within a row")
        for arr in (self.indptr, self.indices, self.data):
            arr.flags.writeable = False

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        return cls.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=shape))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), (n, n))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "SparseMatrix":
        return cls(np.zeros(n_rows + 1), [], [], (n_rows, n_cols))

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    @cached_property
    def edge_segments(self) -> tuple[np.ndarray, sp.csr_matrix, sp.csr_matrix]:
        """``(dst, by_dst, by_src)``: row id per stored entry and the row/column segment-sum operators."""
        n, n_e = self.shape[0], self.nnz
        by_dst = sp.csr_matrix((np.ones(n_e), np.arange(n_e), self.indptr), shape=(n, n_e))
        by_src = sp.csr_matrix((np.ones(n_e), (self.indices, np.arange(n_e))), shape=(self.shape[1], n_e))
        return self.row_ids(), by_dst, by_src

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0]), self.row_nnz())

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr_t)

    def is_symmetric(self) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        return (abs(self.csr - self.csr_t)).nnz == 0

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def spmm(a: SparseMatrix, b: Tensor) -> Tensor:
    b = as_tensor(b)
    if a.shape[1] != b.rows:
        raise DimensionError(f"spmm {a.shape} x {b.shape}")
    out = np.asarray(a.csr @ b.value)
    return _make(out, (b,), lambda g: (np.asarray(a.csr_t @ g),), "spmm")


# reshaping and reductions -----------------------------------------------------


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    n = a.rows

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), back, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    other = {t.shape[1 - axis] for t in tensors}
    if len(other) != 1:
        raise DimensionError(f"concat along axis {axis}: mismatched shapes {[t.shape for t in tensors]}")
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def sum_squares(a: Tensor) -> Tensor:
    v = a.value
    return _make(np.array([[np.sum(v * v)]]), (a,), lambda g: (2.0 * g[0, 0] * v,), "sum_squares")


def mean_rows(a: Tensor) -> Tensor:
    n = a.rows
    if n == 0:
        raise DimensionError("mean over zero rows")
    return _make(a.value.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),), "mean_rows")


def sum_rows(a: Tensor) -> Tensor:
    n = a.rows
    return _make(a.value.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, n, axis=0),), "sum_rows")


def max_rows(a: Tensor) -> Tensor:
    if a.rows == 0:
        raise DimensionError("max over zero rows")
    arg = a.value.argmax(axis=0)
    cols = np.arange(a.cols)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[arg, cols] = g[0]
        return (out,)

    return _make(a.value[arg, cols][None, :], (a,), back, "max_rows")


def segment_reduce(a: Tensor, offsets: np.ndarray, kind: str) -> Tensor:
    """Per-segment mean/sum/max over contiguous row blocks ``offsets[k]:offsets[k+1]``."""
    offsets = np.asarray(offsets, dtype=np.int64)
    sizes = np.diff(offsets)
    if np.any(sizes <= 0):
        raise DimensionError("readout over an empty segment")
    seg = np.repeat(np.arange(len(sizes)), sizes)
    x = a.value
    if kind == "sum" or kind == "mean":
        out = np.add.reduceat(x, offsets[:-1], axis=0)
        if kind == "mean":
            out = out / sizes[:, None]

            def back(g):
                return ((g / sizes[:, None])[seg],)
        else:

            def back(g):
                return (g[seg],)

        return _make(out, (a,), back, f"segment_{kind}")
    if kind == "max":
        out = np.maximum.reduceat(x, offsets[:-1], axis=0)
        # first row attaining the max in each segment receives the gradient
        hit = x == out[seg]
        cols = np.arange(x.shape[1])
        arg = np.empty((len(sizes), x.shape[1]), dtype=np.int64)
        for k in range(len(sizes)):
            arg[k] = offsets[k] + hit[offsets[k] : offsets[k + 1]].argmax(axis=0)

        def back(g):
            out_g = np.zeros(x.shape)
            out_g[arg, cols[None, :]] = g
            return (out_g,)

        return _make(out, (a,), back, "segment_max")
    raise ValueError(f"unknown readout kind {kind!r}")


def head_mean(a: Tensor, n_heads: int) -> Tensor:
    """Average ``n_heads`` equal column blocks (``N x K*F -> N x F``)."""
    n, kf = a.shape
    if kf % n_heads:
        raise DimensionError(f"{kf} columns not divisible into {n_heads} heads")
    f = kf // n_heads
    out = a.value.reshape(n, n_heads, f).mean(axis=1)
    return _make(out, (a,), lambda g: (np.tile(g / n_heads, (1, n_heads)),), "head_mean")


# losses and distances ---------------------------------------------------------


def rowwise_cosine_distance(a: Tensor, b: Tensor, eps: float = 1e-12) -> tuple[Tensor, np.ndarray]:
    """Per-row ``1 - cos(a_v, b_v)`` as an ``N x 1`` column, plus a validity mask.

    Rows where either norm is below ``eps`` are invalid: value 0, no gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine distance on {a.shape} vs {b.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    av, bv = a.value, b.value
    na = np.sqrt(np.einsum("ij,ij->i", av, av))
    nb = np.sqrt(np.einsum("ij,ij->i", bv, bv))
    valid = (na >= eps) & (nb >= eps)
    na_s = np.where(valid, na, 1.0)
    nb_s = np.where(valid, nb, 1.0)
    dot = np.einsum("ij,ij->i", av, bv)
    cos = np.where(valid, dot / (na_s * nb_s), 1.0)
    # rounding can push |cos| a hair past 1; the clamp keeps values in [0, 2]
    value = np.clip(1.0 - cos, 0.0, 2.0)[:, None]
    ca = (cos / na_s**2)[:, None]
    cb = (cos / nb_s**2)[:, None]
    inv = (valid / (na_s * nb_s))[:, None]

    def back(g):
        return (-g * (bv * inv - av * ca * valid[:, None]), -g * (av * inv - bv * cb * valid[:, None]))

    return _make(value, (a, b), back, "cosine_distance"), valid


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(a: Tensor) -> Tensor:
    p = np.exp(_log_softmax(a.value))

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return _make(p, (a,), back, "softmax")


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean over masked rows of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} for logits {logits.shape}")
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise DimensionError(f"mask shape {mask.shape} for {n} rows")
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        raise ValueError("softmax_cross_entropy: empty mask (no supervised rows)")
    y = labels[rows]
    if y.min() < 0 or y.max() >= c:
        raise ValueError("label outside class range")
    logp = _log_softmax(logits.value[rows])
    loss = -logp[np.arange(len(rows)), y].mean()

    def back(g):
        out = np.zeros((n, c))
        d = np.exp(logp)
        d[np.arange(len(rows)), y] -= 1.0
        out[rows] = d * (g[0, 0] / len(rows))
        return (out,)

    return _make(np.array([[loss]]), (logits,), back, "cross_entropy")


def kl_to_target(target_probs: Tensor, logits: Tensor, mask=None) -> Tensor:
    """Mean over masked rows of ``KL(target || softmax(logits))``.

    ``target_probs`` receives a gradient too; wrap it in :func:`stop_gradient`
    to make it a fixed supervision signal.
    """
    if target_probs.shape != logits.shape:
        raise DimensionError(f"KL between {target_probs.shape} and {logits.shape}")
    n, c = logits.shape
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        raise ValueError("kl_to_target: empty mask")
    p = target_probs.value[rows]
    logq = _log_softmax(logits.value[rows])
    logp = np.log(np.where(p > 0, p, 1.0))
    loss = np.sum(p * (logp - logq)) / len(rows)

    def back(g):
        s = g[0, 0] / len(rows)
        gp = np.zeros((n, c))
        gq = np.zeros((n, c))
        gp[rows] = s * np.where(p > 0, logp - logq + 1.0, 0.0)
        gq[rows] = s * (np.exp(logq) * p.sum(axis=1, keepdims=True) - p)
        return (gp, gq)

    return _make(np.array([[loss]]), (target_probs, logits), back, "kl")


# attention --------------------------------------------------------------------


def gat_attention(
    h: Tensor,
    attn_src: Tensor,
    attn_dst: Tensor,
    structure: SparseMatrix,
    n_heads: int,
    negative_slope: float = 0.2,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head masked-softmax attention aggregation.

    ``structure`` row ``i`` lists the nodes ``i`` attends to (its neighbours
    plus itself).  ``h`` is ``N x K*F`` with head ``k`` in columns
    ``k*F:(k+1)*F``; ``attn_src`` / ``attn_dst`` are ``K x F``.  Scores are
    ``LeakyReLU(a_src . h_j + a_dst . h_i)`` softmax-normalised over row ``i``;
    the result is the head-concatenated weighted sum, ``N x K*F``.  With
    ``dropout > 0`` each normalised coefficient is dropped independently
    (inverted scaling), as in the original GAT.
    """
    n, kf = h.shape
    if kf % n_heads:
        raise DimensionError(f"hidden width {kf} not divisible by {n_heads} heads")
    f = kf // n_heads
    if attn_src.shape != (n_heads, f) or attn_dst.shape != (n_heads, f):
        raise DimensionError(f"attention vectors must be {(n_heads, f)}")
    if structure.shape != (n, n):
        raise DimensionError(f"structure {structure.shape} for {n} nodes")
    src = structure.indices
    indptr = structure.indptr
    # segment-sum operators over edges grouped by destination / by source
    dst, by_dst, by_src = structure.edge_segments
    if np.any(structure.row_nnz() == 0) or np.any(by_src.indptr[1:] == by_src.indptr[:-1]):
        raise ValueError("every node must attend and be attended to (add self-loops)")
    hh = h.value.reshape(n, n_heads, f)
    al, ar = attn_src.value, attn_dst.value
    el = np.einsum("nkf,kf->nk", hh, al)
    er = np.einsum("nkf,kf->nk", hh, ar)
    pre = el[src] + er[dst]
    slope = negative_slope + (1.0 - negative_slope) * (pre > 0)
    score = pre * slope
    score = score - np.maximum.reduceat(score, indptr[:-1], axis=0)[dst]
    w = np.exp(score)
    w = w / (by_dst @ w)[dst]
    keep = None
    if dropout > 0:
        if rng is None:
            raise ValueError("attention dropout needs an rng")
        keep = (rng.random(w.shape) >= dropout) / (1.0 - dropout)
    w_used = w if keep is None else w * keep
    heads = []
    for k in range(n_heads):
        m = structure.csr.copy()
        m.data = np.ascontiguousarray(w_used[:, k])
        heads.append(m)
    out = np.stack([heads[k] @ hh[:, k, :] for k in range(n_heads)], axis=1).reshape(n, kf)

    def back(g):
        gg = g.reshape(n, n_heads, f)
        dw = np.einsum("ekf,ekf->ek", gg[dst], hh[src])
        if keep is not None:
            dw *= keep
        dh = np.stack([heads[k].T @ gg[:, k, :] for k in range(n_heads)], axis=1)
        dscore = w * (dw - (by_dst @ (w * dw))[dst])
        dpre = dscore * slope
        d_el = by_src @ dpre
        d_er = by_dst @ dpre
        dh += d_el[:, :, None] * al[None] + d_er[:, :, None] * ar[None]
        d_al = np.einsum("nk,nkf->kf", d_el, hh)
        d_ar = np.einsum("nk,nkf->kf", d_er, hh)
        return (dh.reshape(n, kf), d_al, d_ar)

    return _make(out, (h, attn_src, attn_dst), back, "gat_attention")


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)))

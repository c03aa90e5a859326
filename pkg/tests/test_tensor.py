import numpy as np
import pytest
import scipy.sparse as sp

from smoothkit import tensor as T
from smoothkit.oracle import logsumexp_ce_oracle
from smoothkit.tensor import DimensionError, SparseMatrix, Tape, Tensor

from conftest import check_op_gradient


def test_matmul_identity_and_zero(rng):
    m = rng.normal(size=(3, 4))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(m)).value, m)
    assert np.array_equal(T.matmul(Tensor(np.zeros((2, 3))), Tensor(m)).value, np.zeros((2, 4)))


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_spmm_trivial_cases(rng):
    m = rng.normal(size=(5, 3))
    assert np.array_equal(T.spmm(SparseMatrix.empty(5, 5), Tensor(m)).value, np.zeros((5, 3)))
    assert np.array_equal(T.spmm(SparseMatrix.identity(5), Tensor(m)).value, m)


def test_spmm_matches_dense(rng):
    a = sp.random(5, 5, density=0.3, random_state=3, format="csr")
    m = rng.normal(size=(5, 3))
    out = T.spmm(SparseMatrix.from_scipy(a), Tensor(m)).value
    assert np.max(np.abs(out - a.toarray() @ m)) <= 1e-12


def test_spmm_integer_inputs_exact(rng):
    a = sp.random(7, 6, density=0.4, random_state=5, data_rvs=lambda k: rng.integers(-3, 4, k)).tocsr()
    m = rng.integers(-5, 6, size=(6, 2)).astype(float)
    assert np.array_equal(T.spmm(SparseMatrix.from_scipy(a), Tensor(m)).value, a.toarray() @ m)


def test_spmm_shape_error():
    with pytest.raises(DimensionError):
        T.spmm(SparseMatrix.identity(3), Tensor(np.ones((4, 2))))


def test_sparse_matrix_invariants():
    with pytest.raises(ValueError):
        SparseMatrix(np.array([0, 2, 1]), np.array([0, 1]), np.ones(2), (2, 2))
    with pytest.raises(ValueError):
        SparseMatrix(np.array([0, 1, 2]), np.array([0, 5]), np.ones(2), (2, 2))
    with pytest.raises(ValueError):
        SparseMatrix(np.array([0, 2, 2]), np.array([1, 0]), np.ones(2), (2, 2))


def test_stop_gradient_forward_and_blocking(rng):
    m = T.parameter(rng.normal(size=(3, 2)))
    with Tape() as tape:
        sg = T.stop_gradient(m)
        loss = T.sum_squares(T.add(sg, T.Tensor(0.0)))
        loss = T.add(loss, T.scale(T.sum_all(m), 0.0))
    assert np.array_equal(sg.value, m.value)
    g = tape.backward(loss, [m])
    assert np.array_equal(g[m], np.zeros((3, 2)))


def test_stop_gradient_residual(rng):
    # ||M - SG(M)||^2: residual is zero and only the online side carries gradient
    m = T.parameter(rng.normal(size=(4, 3)))
    with Tape() as tape:
        loss = T.sum_squares(T.sub(m, T.stop_gradient(m)))
    assert loss.item() == 0.0
    assert np.array_equal(tape.backward(loss, [m])[m], np.zeros((4, 3)))
    # with a frozen target, the gradient is 2 (M - target)
    target = m.value + rng.normal(size=m.shape)
    with Tape() as tape:
        loss = T.sum_squares(T.sub(m, T.stop_gradient(Tensor(target))))
    assert np.allclose(tape.backward(loss, [m])[m], 2 * (m.value - target))


def test_stop_gradient_contribution_is_recorded_as_zero(rng):
    m = T.parameter(rng.normal(size=(2, 2)))
    with Tape() as tape:
        sg = T.stop_gradient(m)
        loss = T.sum_squares(T.mul(sg, m))
    tape.backward(loss)
    assert tape.contributions[(sg.node_id, 0)] == 0.0


def test_cosine_distance_basic_cases():
    a = Tensor([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 3.0]])
    b = Tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [2.0, 3.0]])
    d, valid = T.rowwise_cosine_distance(a, b)
    assert np.allclose(d.value[:, 0], [0.0, 1.0, 2.0, 0.0], atol=1e-15)
    assert valid.all()


def test_cosine_distance_degenerate_rows():
    a = Tensor([[0.0, 0.0], [1.0, 2.0]])
    b = Tensor([[1.0, 1.0], [0.0, 0.0]])
    d, valid = T.rowwise_cosine_distance(a, b)
    assert not valid.any()
    assert np.array_equal(d.value, np.zeros((2, 1)))


def test_cosine_distance_shape_error():
    with pytest.raises(DimensionError):
        T.rowwise_cosine_distance(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))


def test_cross_entropy_cases(rng):
    labels = np.array([0, 2, 1])
    logits = np.zeros((3, 3))
    logits[np.arange(3), labels] = 1e6
    assert T.softmax_cross_entropy(Tensor(logits), labels).item() == pytest.approx(0.0, abs=1e-12)
    uniform = T.softmax_cross_entropy(Tensor(np.zeros((4, 5))), np.zeros(4, dtype=int))
    assert uniform.item() == pytest.approx(np.log(5), abs=1e-14)
    x = rng.normal(size=(4, 3))
    y = np.array([1, 0, 2, 2])
    mask = np.array([True, False, True, True])
    got = T.softmax_cross_entropy(Tensor(x), y, mask).item()
    assert abs(got - logsumexp_ce_oracle(x.tolist(), y.tolist(), mask.tolist())) <= 1e-10


def test_cross_entropy_gradient_closed_form(rng):
    x = T.parameter(rng.normal(size=(5, 4)))
    y = np.array([0, 3, 1, 1, 2])
    mask = np.array([1, 1, 0, 1, 0], dtype=bool)
    with Tape() as tape:
        loss = T.softmax_cross_entropy(x, y, mask)
    g = tape.backward(loss)[x]
    p = np.exp(x.value - x.value.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    expected = (p - np.eye(4)[y]) * mask[:, None] / mask.sum()
    assert np.allclose(g, expected, atol=1e-14)


def test_cross_entropy_empty_mask():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(Tensor(np.zeros((2, 2))), np.array([0, 1]), np.zeros(2, dtype=bool))


def test_backward_trivial_gradients(rng):
    w = T.parameter(rng.normal(size=(3, 4)))
    with Tape() as tape:
        s = T.sum_all(w)
    assert np.array_equal(tape.backward(s)[w], np.ones((3, 4)))
    with Tape() as tape:
        q = T.sum_squares(w)
    assert np.allclose(tape.backward(q)[w], 2 * w.value)


def test_backward_rejects_non_scalar(rng):
    w = T.parameter(rng.normal(size=(2, 2)))
    with Tape() as tape:
        out = T.scale(w, 2.0)
    with pytest.raises(ValueError):
        tape.backward(out)


def test_backward_rejects_off_tape():
    with pytest.raises(ValueError):
        Tape().backward(Tensor(1.0))


def test_no_recording_without_tape(rng):
    w = T.parameter(rng.normal(size=(2, 2)))
    out = T.scale(w, 2.0)
    assert out.parents == ()


def test_dropout_seeded_and_eval_identity(rng):
    x = Tensor(np.ones((50, 20)))
    a = T.dropout(x, 0.5, np.random.default_rng(7)).value
    b = T.dropout(x, 0.5, np.random.default_rng(7)).value
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    assert T.dropout(x, 0.5, None, training=False) is x


UNARY = {
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "elu": T.elu,
    "elu_alpha": lambda a: T.elu(a, 0.7),
    "softmax": T.softmax,
    "mean_rows": T.mean_rows,
    "sum_rows": T.sum_rows,
    "max_rows": T.max_rows,
    "sum_squares": T.sum_squares,
    "head_mean": lambda a: T.head_mean(a, 2),
    "take_rows": lambda a: T.take_rows(a, [0, 2, 2, 1]),
    "segment_mean": lambda a: T.segment_reduce(a, np.array([0, 2, 5]), "mean"),
    "segment_max": lambda a: T.segment_reduce(a, np.array([0, 2, 5]), "max"),
    "segment_sum": lambda a: T.segment_reduce(a, np.array([0, 3, 5]), "sum"),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("point", range(5))
def test_unary_gradients(name, point):
    x = np.random.default_rng(point).normal(size=(5, 4))
    # keep kinked ops away from their kinks
    x[np.abs(x) < 1e-3] = 0.5
    report = check_op_gradient(UNARY[name], x, seed=point)
    assert report.passed, report.line()


@pytest.mark.parametrize("point", range(5))
def test_binary_gradients(point):
    r = np.random.default_rng(100 + point)
    a, b = r.normal(size=(4, 3)), r.normal(size=(4, 3))
    for fn in (T.add, T.sub, T.mul):
        assert check_op_gradient(fn, a, b, seed=point).passed
    assert check_op_gradient(lambda u, v: T.mul(u, T.take_rows(v, [1])), a, b[:1].repeat(2, 0), seed=point).passed
    assert check_op_gradient(T.matmul, a, r.normal(size=(3, 2)), seed=point).passed
    assert check_op_gradient(lambda u, v: T.concat([u, v]), a, b, seed=point).passed
    assert check_op_gradient(lambda u, v: T.concat([u, v], axis=1), a, b, seed=point).passed


@pytest.mark.parametrize("point", range(5))
def test_cosine_and_kl_gradients(point):
    r = np.random.default_rng(200 + point)
    a, b = r.normal(size=(6, 3)), r.normal(size=(6, 3))
    assert check_op_gradient(lambda u, v: T.rowwise_cosine_distance(u, v)[0], a, b, seed=point).passed
    target = r.dirichlet(np.ones(3), size=6)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    assert check_op_gradient(lambda z: T.kl_to_target(T.Tensor(target), z, mask), a, seed=point).passed
    labels = r.integers(0, 3, 6)
    assert check_op_gradient(lambda z: T.softmax_cross_entropy(z, labels, mask), a, seed=point).passed


@pytest.mark.parametrize("point", range(5))
def test_spmm_and_attention_gradients(point):
    r = np.random.default_rng(300 + point)
    a = SparseMatrix.from_scipy(sp.random(6, 6, density=0.4, random_state=point, format="csr"))
    assert check_op_gradient(lambda x: T.spmm(a, x), r.normal(size=(6, 3)), seed=point).passed
    adj = sp.random(6, 6, density=0.3, random_state=point) + sp.eye(6)
    structure = SparseMatrix.from_scipy((adj + adj.T).tocsr())
    report = check_op_gradient(
        lambda h, s, d: T.gat_attention(h, s, d, structure, 2),
        r.normal(size=(6, 4)), r.normal(size=(2, 2)), r.normal(size=(2, 2)), seed=point,
    )
    assert report.passed, report.line()


def test_attention_single_node_and_uniform_scores(rng):
    h = rng.normal(size=(1, 3))
    out = T.gat_attention(Tensor(h), Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), SparseMatrix.identity(1), 1)
    assert np.allclose(out.value, h)
    adj = sp.csr_matrix(np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float))
    h = rng.normal(size=(3, 2))
    zero = Tensor(np.zeros((1, 2)))
    out = T.gat_attention(Tensor(h), zero, zero, SparseMatrix.from_scipy(adj), 1).value
    expected = np.vstack([h[[0, 1]].mean(0), h.mean(0), h[[1, 2]].mean(0)])
    assert np.allclose(out, expected, atol=1e-14)


def test_broadcast_rules(rng):
    a = Tensor(rng.normal(size=(3, 2)))
    assert T.add(a, Tensor(rng.normal(size=(1, 2)))).shape == (3, 2)
    assert T.mul(a, Tensor(rng.normal(size=(3, 1)))).shape == (3, 2)
    with pytest.raises(DimensionError):
        T.add(a, Tensor(np.ones((2, 2))))


def test_finite_outputs_for_finite_inputs(rng):
    x = Tensor(rng.normal(scale=50, size=(10, 4)))
    for fn in (T.relu, T.elu, T.softmax, T.leaky_relu):
        assert np.all(np.isfinite(fn(x).value))

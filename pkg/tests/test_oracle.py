import numpy as np
import pytest

from smoothkit import tensor as T
from smoothkit.oracle import (
    OracleReport,
    check_edge_adjacency,
    check_ndr,
    check_prop1,
    check_total_loss_gradient,
    edge_adj_oracle,
    frozen_targets,
    grad_check,
    ndr_loop_oracle,
    prop1_oracle,
    relative_error,
)


def test_report_pass_rule():
    assert OracleReport("x", 3, 1e-11, 1e-10).passed
    assert not OracleReport("x", 3, 2e-10, 1e-10).passed
    assert OracleReport("x", 3, 0.0, 0.0).line().startswith("PASS x 0.000e+00")


def test_loop_oracle_trivial():
    vals, valid = ndr_loop_oracle(3, [(0, 1), (1, 2)], np.ones((3, 2)))
    assert np.allclose(vals, 0) and valid.all()
    vals, valid = ndr_loop_oracle(3, [(0, 1), (0, 2)], [[1.0, 0.0], [-1.0, 0.5], [-1.0, -0.5]])
    assert vals[0] == pytest.approx(2.0)


def test_prop1_equal_embeddings_and_single_edge(rng):
    assert prop1_oracle(3, [(0, 1), (1, 2)], np.ones((3, 2)), 2) == (0.0, 0.0)
    x = rng.normal(size=(2, 3))
    for p in (1, 2):
        d2, d1 = prop1_oracle(2, [(0, 1)], x, p)
        assert d2 == pytest.approx(d1, abs=1e-15)
    with pytest.raises(ValueError):
        prop1_oracle(2, [(0, 1)], x, 3)


def test_prop1_normalisation_is_directed(rng):
    x = rng.normal(size=(3, 2))
    d2, _ = prop1_oracle(3, [(0, 1), (1, 2)], x, 2)
    manual = 2 * (np.linalg.norm(x[0] - x[1]) + np.linalg.norm(x[1] - x[2])) / 4
    assert d2 == pytest.approx(manual)


def test_edge_adj_oracle_cases():
    assert np.array_equal(edge_adj_oracle([(0, 1), (1, 2), (0, 2)]), ~np.eye(3, dtype=bool))
    assert not edge_adj_oracle([(0, 1), (2, 3)]).any()


def test_grad_check_linear_mse(rng):
    # integer data and a dyadic step keep every float exact; central differences are exact on quadratics
    w = rng.integers(-3, 4, size=(3, 2)).astype(float)
    x, y = rng.integers(-3, 4, size=(5, 3)).astype(float), rng.integers(-3, 4, size=(5, 2)).astype(float)
    analytic = {"w": 2 * x.T @ (x @ w - y)}
    report = grad_check({"w": w}, lambda: float(np.sum((x @ w - y) ** 2)), analytic, h=2.0**-10, tol=1e-9)
    assert report.passed, report.line()


def test_grad_check_two_layer_gcn():
    from smoothkit.graph import sbm_generate
    from smoothkit.layers import GNN, ModelConfig

    g = sbm_generate(2, 6, 0.6, 0.2, 4, seed=3)
    model = GNN(ModelConfig("gcn", 2, 5, dropout=0.0, activation="elu"), 4, 2)

    def loss():
        return T.softmax_cross_entropy(model.forward(g).logits, g.labels, g.masks["train"]).item()

    with T.Tape() as tape:
        l = T.softmax_cross_entropy(model.forward(g).logits, g.labels, g.masks["train"])
    grads = tape.backward(l, model.params.values())
    report = grad_check({k: p.value for k, p in model.params.items()}, loss, {k: grads[p] for k, p in model.params.items()})
    assert report.passed, report.line()


def test_grad_check_detects_wrong_gradient():
    w = np.array([[1.0, 2.0]])
    report = grad_check({"w": w}, lambda: float(np.sum(w**2)), {"w": 3 * w})
    assert not report.passed


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)


def test_frozen_targets_replay(rng):
    a = T.Tensor(rng.normal(size=(2, 2)))
    with frozen_targets() as frozen:
        first = T.stop_gradient(a).value.copy()
        frozen.replay()
        again = T.stop_gradient(T.Tensor(np.zeros((2, 2)))).value
    assert np.array_equal(first, again)
    assert np.array_equal(T.stop_gradient(T.Tensor(np.zeros((2, 2)))).value, np.zeros((2, 2)))


@pytest.mark.parametrize("check", [check_ndr, check_edge_adjacency, lambda: check_prop1(1), lambda: check_prop1(2), check_total_loss_gradient])
def test_suite_checks_pass(check):
    report = check()
    assert report.passed, report.line()

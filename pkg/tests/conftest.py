from pathlib import Path

import numpy as np
import pytest

from smoothkit import tensor as T
from smoothkit.oracle import grad_check

ROOT = Path(__file__).resolve().parents[1]
CORA = ROOT / "data" / "cora"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


def check_op_gradient(fn, *arrays, seed=0, tol=1e-5):
    """Central-difference check of ``sum(fn(*tensors) * R)`` for a fixed random ``R``."""
    rng = np.random.default_rng(seed)
    leaves = [T.parameter(np.array(a, dtype=float)) for a in arrays]
    with T.Tape() as tape:
        out = fn(*leaves)
        weight = rng.normal(size=out.shape)
        loss = T.sum_all(T.mul(out, T.Tensor(weight)) if out.shape != (1, 1) else T.scale(out, float(weight[0, 0])))
    grads = tape.backward(loss, leaves)

    def value():
        out = fn(*leaves)
        return float(np.sum(out.value * weight))

    params = {str(i): leaf.value for i, leaf in enumerate(leaves)}
    analytic = {str(i): grads[leaf] for i, leaf in enumerate(leaves)}
    return grad_check(params, value, analytic, tol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cora():
    if not (CORA / "cora.content").exists():
        pytest.skip("Cora files not present")
    from smoothkit.graph import load_citation

    return load_citation(CORA / "cora.content", CORA / "cora.cites")

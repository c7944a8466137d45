import numpy as np
import pytest

from dualiht.losses import make_loss
from dualiht.objective import ProblemInstance

LOSSES = {
    "squared": make_loss("squared"),
    "huber": make_loss("huber", 0.25),
    "hinge": make_loss("hinge"),
}


def random_instance(kind="squared", seed=0, N=12, d=6, k=2, lam=0.3, sparse=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, d))
    if sparse:
        import scipy.sparse as sp

        X[rng.random((N, d)) < 0.5] = 0.0
        X = sp.csr_matrix(X)
    if kind == "squared":
        y = rng.standard_normal(N) * 2
    else:
        y = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    return ProblemInstance(X, y, lam, k, LOSSES[kind])


def random_feasible_alpha(inst, rng, scale=2.0):
    if inst.loss.kind == "squared":
        return rng.standard_normal(inst.N) * scale
    # y*alpha uniform in [-1, 0], with some mass on the endpoints
    t = rng.uniform(-1, 0, inst.N)
    t[rng.random(inst.N) < 0.1] = -1.0
    t[rng.random(inst.N) < 0.1] = 0.0
    return t * inst.y


def random_sparse_w(inst, rng, scale=1.0):
    w = np.zeros(inst.d)
    idx = rng.choice(inst.d, size=int(rng.integers(0, inst.k + 1)), replace=False)
    w[idx] = rng.standard_normal(idx.size) * scale
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)

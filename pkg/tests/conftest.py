import numpy as np
import pytest

from momentband.data import Dataset, Schema
from momentband.kernels import ForestConfig, fit_forest
from momentband.estimator import solve_queries


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jitted kernels once so timed tests measure compute only."""
    rng = np.random.default_rng(0)
    x = rng.random((40, 2))
    y = x[:, 0] + rng.standard_normal(40)
    forest = fit_forest(x, y, ForestConfig(b=10, trees=3, min_leaf=2), 0)
    solve_queries(forest, np.array([[0.5, 0.5]]), np.full(40, -1.0), y)
    knn = fit_forest(x, y, ForestConfig(kind="knn", b=10, trees=3, knn_k=4), 0)
    solve_queries(knn, np.array([[0.5, 0.5]]), np.full(40, -1.0), y)
    knn.weights_at(np.array([0.5, 0.5]))
    forest.weights_at(np.array([0.5, 0.5]))


@pytest.fixture
def toy_dataset():
    rng = np.random.default_rng(7)
    n = 200
    z = rng.random((n, 2))
    w = (rng.random(n) < 0.5).astype(np.int8)
    y = z[:, 0] + w * z[:, 0] + 0.3 * rng.standard_normal(n)
    schema = Schema(outcome="y", covariates=("z1", "z2"), conditioning=("z1",),
                    treatment="w")
    return Dataset(y=y, z=z, schema=schema, w=w)


@pytest.fixture
def regression_dataset():
    rng = np.random.default_rng(11)
    n = 300
    z = rng.random((n, 2))
    y = z[:, 0] + 0.2 * rng.standard_normal(n)
    schema = Schema(outcome="y", covariates=("z1", "z2"), conditioning=("z1",))
    return Dataset(y=y, z=z, schema=schema)

import numpy as np
import pytest

from advtrace.datax import NoiseSpec, gen_blobs, tracer_subset
from advtrace.separation import train_classifier, train_tracer


@pytest.fixture(scope="session")
def desk_data():
    """Default desk-scale blob data: K=10, d=16, 5000 train / 1000 test."""
    full = gen_blobs(k=10, d=16, n_per_class=600, seed=101)
    return full.split(5000)


@pytest.fixture(scope="session")
def desk_classifier(desk_data):
    train, _ = desk_data
    return train_classifier(train, epochs=200, seed=202)


@pytest.fixture(scope="session")
def desk_tracers(desk_data):
    train, _ = desk_data
    subset = tracer_subset(train, n=1000, seed=303)
    noise = NoiseSpec()
    return [train_tracer(subset, seed=s, noise=noise) for s in (404, 505)]


class LinearOracle:
    """Analytic hard-label oracle: class 1 iff w.x + b <= 0 (class 0 wins
    ties through argmax's lowest-index rule). Implements the same query
    surface as HardLabelOracle."""

    def __init__(self, w, b=0.0, budget=None):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = float(b)
        self.queries = 0
        self.budget = budget
        self.copy_id = 0

    def _label(self, x):
        s = float(self.w @ x + self.b)
        return 0 if s >= 0.0 else 1

    def query(self, x):
        self.queries += 1
        return self._label(np.asarray(x, dtype=np.float64))

    def query_batch(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        self.queries += len(xs)
        s = xs @ self.w + self.b
        return np.where(s >= 0.0, 0, 1).astype(np.int64)


@pytest.fixture
def linear_oracle():
    # boundary at first coordinate = 0; x=(-1, 0) has true label 1,
    # adversarial region is x1 > 0, analytic optimum distance is 1.0
    return LinearOracle(w=[1.0, 0.0], b=0.0)

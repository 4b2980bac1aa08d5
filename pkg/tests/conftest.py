import sys

import numpy as np
import pytest

from pdattack.datasets import blobs, moons
from pdattack.models import LinearClassifier, MLPClassifier


@pytest.fixture(scope="session")
def moons_data():
    return moons(500, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def moons_mlp(moons_data):
    X, y = moons_data
    return MLPClassifier(hidden_layer_sizes=(16,), random_state=0).fit(X, y)


@pytest.fixture(scope="session")
def blobs_linear():
    X, y = blobs(200, n_features=4, n_classes=3, noise=1.0, seed=3)
    return X, y, LinearClassifier(random_state=0).fit(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)

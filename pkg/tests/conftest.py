import numpy as np
import pytest

from freightmode.dataset import EncodedDataset, SyntheticSpec, synthetic_dataset


def make_data(X, y, w=None, feature_names=None):
    y = np.asarray(y, dtype=np.int64)
    X = np.asarray(X, dtype=np.float64).reshape(y.size, -1)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=np.float64)
    return EncodedDataset(X, y, w, feature_names)


def random_data(rng, n=60, d=4, n_classes=3, levels=None):
    """Small random problem; ``levels`` caps the distinct values per feature."""
    if levels is None:
        X = rng.normal(size=(n, d))
    else:
        X = rng.integers(0, levels, size=(n, d)).astype(float)
    y = rng.integers(0, n_classes, size=n)
    w = rng.uniform(0.5, 3.0, size=n)
    return make_data(X, y, w)


@pytest.fixture(scope="session")
def synth_small():
    return synthetic_dataset(SyntheticSpec(600, seed=3))


@pytest.fixture(scope="session")
def synth_500():
    return synthetic_dataset(SyntheticSpec(500, seed=11))


# one "criterion N ...: PASS/FAIL" line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from drmean.datagen import Dataset


def make_data(t, y, X=None):
    """Small dataset from lists; y entries for nonrespondents are ignored."""
    t = np.asarray(t, dtype=np.int8)
    y = np.where(t == 1, np.asarray(y, dtype=float), np.nan)
    n = len(t)
    if X is None:
        X = np.ones((n, 1))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = ("const",) + tuple(f"v{j}" for j in range(1, X.shape[1]))
    return Dataset(X=X, t=t, y=y, names=names)


@pytest.fixture
def hand3():
    return make_data([1, 1, 0], [2.0, 4.0, 0.0])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

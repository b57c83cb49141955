import numpy as np
import pytest

from solrcmf.datamodel import MatrixKey, ObservedMatrix, build_collection
from solrcmf.simulate import Scenario, build_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_scenario(seed=0, snr=np.inf, sparsity=0.0):
    """Three views in a chain with four factors; cheap enough for unit tests."""
    views = {1: 12, 2: 10, 3: 8}
    D = {
        (1, 2): [0.0, 1.0, 0.7, 0.0],
        (2, 3): [0.0, 0.8, 0.0, 0.6],
        (1, 3): [0.9, 0.0, 0.0, 0.5],
    }
    return Scenario(views, D, sparsity, snr, seed)


@pytest.fixture
def small_truth():
    return build_scenario(small_scenario(seed=3))


def collection_from_arrays(arrays, dims):
    entries = [ObservedMatrix.from_array(MatrixKey(*key), x) for key, x in arrays.items()]
    return build_collection(dims.items(), entries)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for the terminal summary, then assert."""

    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

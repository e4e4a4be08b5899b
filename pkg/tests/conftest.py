import warnings

import numpy as np
import pytest

from twistorlab.disk_solver import EmbeddingN, SolverConfig, single_bump

# Lines recorded by the acceptance tests; printed once at the end of the run
# so they are visible even when pytest captures per-test output.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def real_slice() -> EmbeddingN:
    return EmbeddingN.real_slice()


@pytest.fixture(scope="session")
def bumped() -> EmbeddingN:
    return single_bump(1e-3)


@pytest.fixture(scope="session")
def fast_config() -> SolverConfig:
    return SolverConfig(M_modes=32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

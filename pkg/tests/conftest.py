import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from photonic_qt.data import DatasetSplit, load_pool, subset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# (PASS|FAIL, criterion, detail) lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{status}  {name}: {detail}")


@pytest.fixture(scope="session")
def pool():
    return load_pool()


@pytest.fixture(scope="session")
def tiny_split(pool):
    return subset(pool, 200, 100, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synthetic_split(n: int, seed: int = 0) -> DatasetSplit:
    r = np.random.default_rng(seed)
    return DatasetSplit(r.random((n, 28, 28)), r.integers(0, 10, n), "synthetic")


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """Largest |a - n| / max(|n|, floor) over entries."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)))

import numpy as np
import pytest

from kpzsim.scaling import derive_coeffs


@pytest.fixture(scope="session")
def asep_coeffs():
    return derive_coeffs("asep", 0.5, 0.0)


@pytest.fixture(scope="session")
def s6v_coeffs():
    return derive_coeffs("s6v", 0.5, 1.0, z=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

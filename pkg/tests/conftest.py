import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

from stochscf import dftb  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_system():
    return dftb.generate_synthetic(dftb.SyntheticSpec(atoms=8, seed=1, beta=2.0, hubbard=4.0))


@pytest.fixture(scope="session")
def multi_orbital_system():
    return dftb.random_system(np.random.default_rng(7), (1, 2, 3, 2), beta=1.5)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

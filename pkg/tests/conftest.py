import numpy as np
import pytest
from hypothesis import settings

from ckli import build_grid

settings.register_profile("ckli", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("ckli")


@pytest.fixture
def grid8():
    return build_grid(8, 8)


@pytest.fixture
def grid4():
    return build_grid(4, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = getattr(terminalreporter.config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

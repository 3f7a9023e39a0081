import numpy as np
import pytest

from seqada.engine import RunConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    """A run small enough for unit tests (well under a second)."""
    return RunConfig(pretrain_iters=60, s1_iters=5, s2_iters=12, gamma=4, rounds=2, batch_size=16)

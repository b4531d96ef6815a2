import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pair(rng, n=64, noise=0.1):
    x = rng.uniform(0, 1, size=(n, n))
    y = np.clip(x + rng.normal(0, noise, size=x.shape), 0, 1)
    return x, y


def pytest_terminal_summary(terminalreporter):
    from acceptance_record import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import settings

from strata import design_space as ds

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")

X0 = np.array([10.0, 6.0, 16.0, 0.8, 1.0, 0.0, 0.35, 0.6])
# 22-entry reference design with L = 8 knots
X_STAR = np.array([10.99, 4.87, 15.37, 1.0, 1.53, -0.31,
                   0.45, 0.49, 0.24, 0.2, 0.47, 0.2, 0.21, 0.35,
                   0.52, 0.49, 0.78, 0.39, 0.89, 0.68, 0.59, 0.6])


def random_designs(rng, L, n):
    """Uniform in-bounds designs, rejecting the ones whose feed outgrows the board (Y <= l_f)."""
    b = ds.default_bounds(L)
    out = []
    while len(out) < n:
        x = b.lower + rng.random(b.lower.size) * b.span
        if x[2] + x[4] - x[1] > 0:
            out.append(x)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

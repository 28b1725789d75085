from __future__ import annotations

import numpy as np
import pytest

from capfade.benchmark import make_benchmark
from capfade.curve import CapacityCurve


def two_slope_curve(knee, length, q0=2.0, early=-1e-3, late=-1e-2, cell_id="c", noise=0.0, rng=None):
    """Piecewise-linear fade with a breakpoint at cycle ``knee`` (cycles 1..length)."""
    c = np.arange(1, length + 1, dtype=float)
    q = np.where(c <= knee, q0 + early * (c - 1), q0 + early * (knee - 1) + late * (c - knee))
    if noise:
        q = q * (1.0 + rng.uniform(-noise, noise, len(c)))
    return CapacityCurve(cell_id, c, q, q0)


def random_curve(rng, length=None, cell_id="r", start=1):
    """Unit-spaced, strictly positive, noisy decreasing curve."""
    length = int(rng.integers(20, 400)) if length is None else length
    c = np.arange(start, start + length, dtype=float)
    q = 2.0 - np.cumsum(rng.uniform(0.0, 2e-3, length)) + rng.normal(0.0, 1e-4, length)
    return CapacityCurve(cell_id, c, q, 2.0)


@pytest.fixture(scope="session")
def bench():
    return make_benchmark(seed=0)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

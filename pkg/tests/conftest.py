import numpy as np
import pytest

from ccpd import kernels
from ccpd.model import PartitionedFactors, Ranks

IMPLS = kernels.implementations()


@pytest.fixture(params=sorted(IMPLS))
def impl(request):
    """Every available kernel backend module."""
    return IMPLS[request.param]


@pytest.fixture
def force_backend(monkeypatch):
    """Swap the module-level kernel backend for the duration of a test."""

    def _set(name):
        monkeypatch.setattr(kernels, "_impl", IMPLS[name])

    return _set


def random_theta(rng, S, V, T, R, L):
    return PartitionedFactors(
        rng.standard_normal((S, R)),
        rng.standard_normal((V, R)),
        [rng.standard_normal((S, l)) for l in L],
        [rng.standard_normal((V, l)) for l in L],
        [rng.standard_normal((t, R)) for t in T],
        [rng.standard_normal((t, l)) for t, l in zip(T, L)],
    ).validate()


def random_data(rng, S, V, T):
    return [np.asfortranarray(rng.standard_normal((S, V, t))) for t in T]


__all__ = ["random_theta", "random_data", "Ranks", "ACCEPTANCE_LINES"]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

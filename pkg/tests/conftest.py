import numpy as np
import pytest

from driftwalk.generators import GeneratorSpec, generate
from driftwalk.lattice import DriftField, LatticeDims

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def plaquette8():
    return generate(GeneratorSpec("plaquette_iid", LatticeDims(2, 8), seed=1))[1]


@pytest.fixture
def zero8():
    return DriftField.zeros(LatticeDims(2, 8))


def make_env(kind, d, L, seed, **kw):
    return generate(GeneratorSpec(kind, LatticeDims(d, L), seed=seed, **kw))[1]


def random_mean_zero(shape, seed):
    f = np.random.default_rng(seed).standard_normal(shape)
    return f - f.mean()

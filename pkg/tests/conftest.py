import numpy as np
import pytest

from dsdl.data import synth_generate
from dsdl.model import Hyper, apus_train, architecture_for

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def planted():
    return synth_generate(64, 8, 512, seed=0, noise_sigma=0.05, n_holdout=128)


@pytest.fixture(scope="session")
def trained(planted):
    return apus_train(planted.train, hyper=Hyper(seed=0), arch=architecture_for(planted.train))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

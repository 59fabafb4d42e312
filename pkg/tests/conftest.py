import numpy as np
import pytest
from hypothesis import settings

from schrodnet.netgraph import build_cmn

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def c25():
    return build_cmn(5)


@pytest.fixture(scope="session")
def c37():
    return build_cmn(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)

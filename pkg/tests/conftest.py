import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from podseg.core import cityscapes_catalog
from podseg.sampling import small_catalog

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def catalog():
    return cityscapes_catalog()


@pytest.fixture
def small():
    return small_catalog()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

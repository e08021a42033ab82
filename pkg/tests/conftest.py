import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wpmec.model import default_params
from wpmec.verify import RunCache

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def run_cache():
    """Full-length simulation runs shared by the engine and acceptance tests."""
    return RunCache()


@pytest.fixture
def k8():
    return default_params(8)


@pytest.fixture
def k1():
    return default_params(1)


@pytest.fixture
def k2():
    return default_params(2)


@pytest.fixture
def k3():
    return default_params(3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERION_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def report_criterion():
    """Print a criterion result now and again in the terminal summary."""
    def report(result):
        line = result.line()
        print(line)
        _CRITERION_LINES[result.number] = line
        return result
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERION_LINES):
            terminalreporter.write_line(_CRITERION_LINES[n])

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cardiocal.model import ParameterSet
from cardiocal.simulation import run_to_limit_cycle

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def pref():
    return ParameterSet.reference()


@pytest.fixture(scope="session")
def reference_cycle(pref):
    """25-beat reference run, shared by every test that only reads it."""
    return run_to_limit_cycle(pref)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print the one-line outcome of an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from freqlab.geometry import GraphDomain, LipschitzGraph

settings.register_profile(
    "freqlab", deadline=None, derandomize=True, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("freqlab")

# acceptance criteria record their verdicts here; printed at the end of the run
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, msg = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture
def flat2():
    return GraphDomain(LipschitzGraph.flat(2))


@pytest.fixture
def flat3():
    return GraphDomain(LipschitzGraph.flat(3))


@pytest.fixture
def ramp2():
    return GraphDomain(LipschitzGraph.ramp(2, 0.1))


def unit(n, i=-1):
    e = np.zeros(n)
    e[i] = 1.0
    return e

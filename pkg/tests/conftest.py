import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def span_residual(B, M):
    """Largest relative distance of a row of ``M`` from the row span of ``B``."""
    M = np.atleast_2d(M)
    R = M - (M @ B.T) @ B
    return float(np.max(np.linalg.norm(R, axis=1) / np.maximum(1.0, np.linalg.norm(M, axis=1))))


# -- acceptance report -----------------------------------------------------------------
#
# Acceptance tests register one line each; the lines are printed together at
# the end of the run whatever the outcome of the individual tests.

ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}" + (f"  ({detail})" if detail else ""))

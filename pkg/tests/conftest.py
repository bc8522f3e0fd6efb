import pytest

from corotwave import approx as ap
from corotwave import matching as mt


@pytest.fixture(scope="session")
def small_profile():
    return mt.glue_at_cone(0.01, mode="small", q1=0.02)


@pytest.fixture(scope="session")
def large_profile():
    return mt.glue_at_cone(0.01, mode="large", d1t=10.0)


@pytest.fixture(scope="session")
def small_field(small_profile):
    return ap.ApproxSolutionField(small_profile, ap.CutoffSpec(1.0))


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def verdict():
    def record(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

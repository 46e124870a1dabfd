import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from odecofield import synthetic

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cube5():
    return synthetic.cube5()


@pytest.fixture(scope="session")
def box3():
    return synthetic.box_grid((3, 3, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the end-of-run summary.

    Usage: ``criterion(number, title, detail)`` once the checks have run;
    the outcome is taken from the test's own pass/fail status.
    """
    entry = {}

    def record(number, title, detail=""):
        entry.update(number=number, title=title, detail=detail)

    yield record
    if entry:
        _ACCEPTANCE[request.node.nodeid] = entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.stash_outcome = rep.passed


def pytest_runtest_teardown(item):
    ok = getattr(item, "stash_outcome", None)
    if ok is not None:
        item.config._acceptance_outcomes = getattr(item.config, "_acceptance_outcomes", {})
        item.config._acceptance_outcomes[item.nodeid] = ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = getattr(config, "_acceptance_outcomes", {})
    rows = []
    for nodeid, ok in outcomes.items():
        if "test_acceptance.py" not in nodeid:
            continue
        e = _ACCEPTANCE.get(nodeid, {})
        num = e.get("number", "?")
        title = e.get("title", nodeid.split("::")[-1])
        rows.append((num, f"criterion {num} {'PASS' if ok else 'FAIL'}: {title}" +
                     (f" ({e['detail']})" if e.get("detail") else "")))
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(rows, key=lambda r: str(r[0])):
            terminalreporter.write_line(line)

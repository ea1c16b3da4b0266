import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from shockbif import Grid1D, OperatorFamily, burgers, synthetic_crossing, track_crossing  # noqa: E402

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    item_marker = getattr(report, "criterion", None)
    if item_marker is not None:
        number, title = item_marker
        outcome = "PASS" if report.passed else "FAIL"
        prev = _criteria.get(number)
        if prev is None or prev[0] == "PASS":
            _criteria[number] = (outcome, title, getattr(report, "measured", ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)
        report.measured = getattr(item, "measured", "")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        outcome, title, measured = _criteria[number]
        line = f"criterion {number:>2} {outcome}: {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)


@pytest.fixture
def measure(request):
    """Attach a short measured-value string to the acceptance summary line."""
    def record(text):
        prev = getattr(request.node, "measured", "")
        request.node.measured = f"{prev}; {text}" if prev else text
    return record


@pytest.fixture(scope="session")
def grid801():
    return Grid1D(30.0, 801)


@pytest.fixture(scope="session")
def grid401():
    return Grid1D(30.0, 401)


@pytest.fixture(scope="session")
def burgers801(grid801):
    return OperatorFamily(burgers(), grid801)


@pytest.fixture(scope="session")
def o2_family(grid401):
    return OperatorFamily(synthetic_crossing(1), grid401)


@pytest.fixture(scope="session")
def o2_crossing(o2_family):
    return track_crossing(o2_family, 1, np.linspace(-0.05, 0.05, 3))


@pytest.fixture(scope="session")
def so2_family(grid401):
    return OperatorFamily(synthetic_crossing(1, gamma=0.5, center=0.5, depth=2.0), grid401)


@pytest.fixture(scope="session")
def so2_crossing(so2_family):
    return track_crossing(so2_family, 1, np.linspace(-0.5, 0.5, 5), guess=-0.1 - 0.1j,
                          radius=0.2)

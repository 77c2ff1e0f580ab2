"""Per-criterion PASS/FAIL reporting for the acceptance suite."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


class Recorder:
    def __init__(self):
        self.details = []

    def __call__(self, key, value):
        self.details.append(f"{key}={value:.6g}" if isinstance(value, float) else f"{key}={value}")


@pytest.fixture
def record(request):
    rec = Recorder()
    request.node._criterion_details = rec.details
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        _RESULTS[number] = (title, report.outcome == "passed", getattr(item, "_criterion_details", []))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, details = _RESULTS[number]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
        if details:
            line += "  [" + ", ".join(details) + "]"
        terminalreporter.write_line(line)

"""Collects acceptance verdicts and prints them as one line per criterion."""
import pytest

_VERDICTS: dict[str, tuple[str, str]] = {}


class CriterionRecorder:
    def __init__(self, name: str):
        self.name = name
        self.detail = ""

    def note(self, text: str) -> None:
        self.detail = text


@pytest.fixture
def criterion(request):
    """Record this test's outcome under its ``criterion`` marker label."""
    marker = request.node.get_closest_marker("criterion")
    rec = CriterionRecorder(marker.args[0] if marker else request.node.name)
    request.node._criterion = rec
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    rec = getattr(item, "_criterion", None)
    if rec is None:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        if report.skipped:
            status = "XFAIL" if hasattr(report, "wasxfail") else "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        _VERDICTS[rec.name] = (status, rec.detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_VERDICTS, key=lambda s: (int(s.split()[0]) if s.split()[0].isdigit() else 99, s)):
        status, detail = _VERDICTS[name]
        terminalreporter.write_line(f"{status:<5s} {name}" + (f"  [{detail}]" if detail else ""))

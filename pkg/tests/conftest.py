import pytest

_VERDICTS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    failed = report.failed
    if report.when == "call" or failed:
        if failed or number not in _VERDICTS:
            detail = dict(report.user_properties).get("detail", "")
            _VERDICTS[number] = f"criterion {number}: {'FAIL' if failed else 'PASS'}  {detail}".rstrip()


@pytest.fixture(autouse=True)
def _criterion_number(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])

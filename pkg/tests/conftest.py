import time

import pytest

_results: dict[int, tuple[str, str, float, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item.user_properties.append(("elapsed", time.perf_counter() - start))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    props = dict(item.user_properties)
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    _results[number] = (title, status, props.get("elapsed", 0.0), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, status, elapsed, detail = _results[number]
        line = f"criterion {number}: {status}  {title}  ({elapsed:.1f} s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)

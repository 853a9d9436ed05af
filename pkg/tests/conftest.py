import pytest

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, desc): tag a test as one numbered acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        num, desc = marker.args
        entry = ACCEPTANCE.setdefault(num, {"desc": desc, "passed": True})
        if report.failed:
            entry["passed"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        entry = ACCEPTANCE[num]
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {num:>2}: {status} - {entry['desc']}")

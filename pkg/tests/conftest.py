import re

_CRITERIA = {}
_NAME = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    key = int(m.group(1))
    summary = dict(report.user_properties).get("summary", "")
    entry = _CRITERIA.setdefault(key, [])
    entry.append((m.group(2), report.outcome, summary))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        for name, outcome, summary in _CRITERIA[key]:
            mark = "PASS" if outcome == "passed" else "FAIL"
            tr.write_line(f"criterion {key}: {mark}: {name.replace('_', ' ')}: {summary}")

import pytest

# criterion id -> [title, passed, notes]
_ACCEPTANCE: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    entry = _ACCEPTANCE.setdefault(cid, [title, True, []])
    if report.failed:
        entry[1] = False
    if report.when == "call":
        entry[2].extend(str(v) for k, v in report.user_properties if k == "measured")
        if report.skipped:
            entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        title, passed, notes = _ACCEPTANCE[cid]
        line = f"{cid} {'PASS' if passed else 'FAIL'}  {title}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        tr.write_line(line)

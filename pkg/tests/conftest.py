import re
import sys

_ERRORED = {}


def _criterion(nodeid):
    m = re.search(r"test_acceptance\.py::test_ac(\d+)_", nodeid)
    return f"AC-{m.group(1)}" if m else None


def pytest_runtest_logreport(report):
    ac = _criterion(report.nodeid)
    if ac and report.failed:
        _ERRORED[ac] = report.when


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not (mod.RESULTS or _ERRORED):
        return
    terminalreporter.section("acceptance criteria")
    for ac in mod.CRITERIA:
        if ac in mod.RESULTS:
            ok, detail = mod.RESULTS[ac]
            line = f"{'PASS' if ok else 'FAIL'}  {detail}"
        elif ac in _ERRORED:
            line = f"FAIL  errored during {_ERRORED[ac]}"
        else:
            line = "SKIP  not selected"
        terminalreporter.write_line(f"{ac:<6} {line}")

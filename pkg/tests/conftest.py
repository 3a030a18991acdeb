import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (test outcome, measured detail)
_CRITERIA: dict[int, list] = {}
_DETAILS: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.fixture
def measured(request):
    """Tests call ``measured("text")`` to attach numbers to their summary line."""
    lines = _DETAILS.setdefault(request.node.nodeid, [])
    return lines.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _CRITERIA.setdefault(marker.args[0], []).append((status, item.name, item.nodeid))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        statuses = {s for s, _, _ in results}
        overall = "FAIL" if "FAIL" in statuses else ("SKIP" if statuses == {"SKIP"} else "PASS")
        details = "; ".join(d for _, _, nodeid in results for d in _DETAILS.get(nodeid, []))
        tests = ", ".join(name for _, name, _ in results)
        tr.write_line(f"criterion {n}: {overall} [{tests}]" + (f" {details}" if details else ""))

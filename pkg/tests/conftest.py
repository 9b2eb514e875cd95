import pathlib
import re
import sys
from collections import defaultdict

sys.path.insert(0, str(pathlib.Path(__file__).parent))

CRITERIA = {
    1: "threshold bounds",
    2: "no-compensation fee sweep",
    3: "fee sweep, four problems",
    4: "compensation sweep",
    5: "per-state quote tables",
    6: "algorithm vs exhaustive search and grid oracle",
    7: "closed form vs quadrature",
    8: "simulation agreement",
    9: "property suites",
    10: "figure-level checks",
}
_ID = re.compile(r"test_acceptance\.py::test_c(\d+)_")
_outcomes = defaultdict(list)


def pytest_runtest_logreport(report):
    m = _ID.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome != "passed":
        if hasattr(report, "wasxfail"):
            kind = "xpassed" if report.outcome == "passed" else "xfailed"
        else:
            kind = report.outcome
        _outcomes[int(m.group(1))].append(kind)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, name in CRITERIA.items():
        got = _outcomes.get(k)
        if not got:
            tr.write_line(f"criterion {k:2d}  NOT RUN  {name}")
            continue
        counts = {kind: got.count(kind) for kind in ("passed", "failed", "skipped", "xfailed", "xpassed") if kind in got}
        detail = ", ".join(f"{v} {kind}" for kind, v in counts.items())
        if set(got) == {"passed"}:
            verdict = "PASS"
        elif "failed" in got or "xpassed" in got:
            verdict = "FAIL"
        else:
            verdict = "FAIL (known conflict, strict xfail)" if "xfailed" in got else "INCOMPLETE"
        tr.write_line(f"criterion {k:2d}  {verdict}  {name}  [{detail}]")

"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_results = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.outcome != "passed":
        key = props["criterion"]
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.when != "call" and outcome == "SKIP":
            detail = str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else ""
        else:
            detail = props.get("detail", "")
        _results[key] = (outcome, props.get("title", ""), detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results):
        outcome, title, detail = _results[key]
        line = f"criterion {key}: {outcome}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

import pytest

CRITERIA = {
    "AC1": "worked example scores (1/3, 3/4, 2/3) end to end",
    "AC2": "scoring equals brute-force counts over all small alignments and verdicts",
    "AC3": "statistics reference fixtures and spearman/pearson-of-ranks identity",
    "AC4": "random-guess localization baseline near 1/7",
    "AC5": "parse failures give (1, 0, 0) and 50-case malformed corpus",
    "AC6": "mock reruns byte-identical with inter-run alpha 1",
    "AC7": "strict-mode exclusion with 10% injected failures",
    "AC8": "keyfact extraction capped at 16 with warning",
    "AC9": "live endpoint smoke test",
}

_results: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker_ids = getattr(report, "acceptance_ids", None)
    if not marker_ids:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        for ac in marker_ids:
            _results.setdefault(ac, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report.acceptance_ids = [m.args[0] for m in item.iter_markers("acceptance")]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for ac, desc in CRITERIA.items():
        outcomes = _results.get(ac)
        if outcomes is None:
            status = "NOT RUN"
        elif any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"{ac} {status}: {desc}")

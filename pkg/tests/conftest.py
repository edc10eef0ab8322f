import os
import re

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CARDIOMECH_LONGRUN") == "1":
        return
    skip = pytest.mark.skip(reason="full-resolution reproduction; set CARDIOMECH_LONGRUN=1")
    for item in items:
        if "longrun" in item.keywords:
            item.add_marker(skip)


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\w+?)_", report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[m.group(1)] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        verdict = {"PASSED": "PASS", "FAILED": "FAIL"}.get(_CRITERIA[key], _CRITERIA[key])
        terminalreporter.write_line(f"criterion {key}: {verdict}")

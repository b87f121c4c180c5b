"""Shared pytest plumbing.

Acceptance tests tag themselves with ``record_property("criterion", label)``;
the terminal summary then prints one PASS/FAIL line per criterion.
"""
import pytest

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    label = props["criterion"]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _criteria[report.nodeid] = (label, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_criteria.values(), key=lambda t: int(t[0].split(".")[0])):
        terminalreporter.write_line(f"{status}  {label}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)

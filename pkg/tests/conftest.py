import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("vmfkit", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("vmfkit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        _acceptance_outcomes[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance pass/fail lines after the run, one per criterion."""
    module = sys.modules.get("test_acceptance")
    if module is None or not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.TITLES):
        if number in module.RESULTS:
            terminalreporter.write_line(module.RESULTS[number])
            continue
        ran = any(name.startswith(f"test_criterion_{number:02d}_") for name in _acceptance_outcomes)
        status, detail = ("FAIL", "errored before reporting") if ran else ("----", "not run")
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {module.TITLES[number]}: {detail}")

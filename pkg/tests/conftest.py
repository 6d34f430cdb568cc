import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atmg.game_model import generate_random, make_matching_pennies

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_DETAILS = {}
_OUTCOMES = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line detail for the acceptance summary."""

    def record(number, title, detail):
        _DETAILS[request.node.nodeid] = (number, title, detail)
        print(f"criterion {number:2d} {title}: {detail}")

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        prev = _OUTCOMES.get(report.nodeid, "passed")
        _OUTCOMES[report.nodeid] = "failed" if report.failed or prev == "failed" else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    lines = []
    for nodeid, outcome in _OUTCOMES.items():
        number, title, detail = _DETAILS.get(nodeid, (None, nodeid.split("::")[-1], "no detail recorded"))
        if number is None:
            digits = "".join(c for c in nodeid.split("::")[-1] if c.isdigit())
            number = int(digits[:2]) if digits else 0
        verdict = "PASS" if outcome == "passed" else "FAIL"
        lines.append((number, f"[{verdict}] criterion {number:2d} {title}: {detail}"))
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def pennies():
    return make_matching_pennies(0.0)


@pytest.fixture
def small_game():
    return generate_random(3, 2, [2, 2], 2, 0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

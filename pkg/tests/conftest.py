import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from filab.verify import random_instance  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instances():
    gen = np.random.default_rng(7)
    return [random_instance(gen) for _ in range(50)]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line for the calling acceptance test."""
    lines = []
    yield lines
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"{'PASS' if ok else 'FAIL'} {request.node.name}" + (f": {lines[-1]}" if lines else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

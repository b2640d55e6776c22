import os
import sys

import pytest

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "envlab",
    max_examples=30,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("envlab")

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record a one-line acceptance result: ``acceptance(cid, title, ok, detail)``."""

    def record(cid, title, ok, detail):
        _ACCEPTANCE[cid] = f"{cid:<4} {'PASS' if ok else 'FAIL'}  {title}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        terminalreporter.write_line(_ACCEPTANCE[cid])

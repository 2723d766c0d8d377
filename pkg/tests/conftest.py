import json

import pytest

from uavsec import scenarios
from uavsec.scenario import run
from uavsec.scenario.config import from_document


def shipped(name: str) -> dict:
    return json.loads(scenarios.path(name).read_text())


def run_doc(doc: dict, **overrides):
    return run(from_document(doc, overrides or None))


@pytest.fixture(scope="session")
def shipped_runs():
    """Each shipped scenario run once, shared across test modules."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run(scenarios.path(name))
        return cache[name]
    return get


# acceptance criterion number -> (passed, title, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {title} ({detail})")

from __future__ import annotations

import sys

import pytest

from builders import case_dataset, popular_dataset
from swarmtrace.store import Store


@pytest.fixture(scope="session")
def popular():
    return popular_dataset()


@pytest.fixture(scope="session")
def popular_store(popular):
    """Read-only: shared by every test in the session."""
    store = Store()
    popular.load(store)
    yield store
    store.close()


@pytest.fixture(scope="session")
def case():
    return case_dataset()


@pytest.fixture(scope="session")
def case_store(case):
    """Read-only: shared by every test in the session."""
    store = Store()
    case.load(store)
    yield store
    store.close()


@pytest.fixture
def store():
    s = Store()
    yield s
    s.close()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

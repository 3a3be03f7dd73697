import time

import pytest

from gicdro import netmodel

SESSION_START = time.perf_counter()
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_collection_modifyitems(items):
    # acceptance criteria run last so the time budget check sees the whole session
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, text = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def toy3():
    return netmodel.shipped_case("toy3")


@pytest.fixture(scope="session")
def toy4():
    return netmodel.shipped_case("toy4")


@pytest.fixture(scope="session")
def epri21():
    return netmodel.build_epri21()

from __future__ import annotations

from importlib import resources

import pytest

from trajsets import fileio, orchestrator

ACCEPTANCE_LINES: list[str] = []


def data_path(name: str) -> str:
    return str(resources.files("trajsets") / "data" / name)


@pytest.fixture(scope="session")
def haneda_path() -> str:
    return data_path("haneda3.json")


@pytest.fixture(scope="session")
def haneda(haneda_path):
    return fileio.load_scenario(haneda_path)


@pytest.fixture(scope="session")
def planned(haneda):
    return orchestrator.plan_cycle(orchestrator.Session(haneda))


@pytest.fixture(scope="session")
def replanned(planned):
    # first plan is at step 1, so tau = 4 re-plans at global step 5
    return orchestrator.replan(planned, 4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import warnings

import pytest

from thermohom.geometry import build_cell_geometry


@pytest.fixture(scope="session")
def hole_cell():
    return build_cell_geometry(2, ("1/3", "2/3"), 12)


@pytest.fixture(scope="session")
def small_cell():
    # hole of side 1/2; the center node of the cell is the only inactive one
    return build_cell_geometry(2, ("1/4", "3/4"), 4)


@pytest.fixture(autouse=True)
def _quiet_delta_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="delta = .* violates")
        yield


ACCEPTANCE_LINES = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

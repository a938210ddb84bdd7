import numpy as np
import pytest
import torch

from vivid.datapipe import Dataset, toy_pairs

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def record_criterion():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line

    return record


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def toy_data():
    return Dataset(toy_pairs(6, seed=0))

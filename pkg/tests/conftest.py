import numpy as np
import pytest

from s2anim.numerics import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def double(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

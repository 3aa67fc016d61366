import numpy as np
import pytest

from rkpmsim.basis import build_basis_table
from rkpmsim.sampling import Box, build_kernels, sample_grid


@pytest.fixture(scope="session")
def cube():
    """216-point unit cube with 30 FPS kernels and its basis table."""
    integ = sample_grid(Box((0, 0, 0), (1, 1, 1)), 216)
    kernels = build_kernels(integ, 30)
    return integ, kernels, build_basis_table(integ, kernels)


@pytest.fixture(scope="session")
def bar():
    """Slender 2 x 0.5 x 0.5 bar, about 250 points and 40 kernels."""
    integ = sample_grid(Box((0, 0, 0), (2, 0.5, 0.5)), 250)
    kernels = build_kernels(integ, 40)
    return integ, kernels, build_basis_table(integ, kernels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL summary line; the lines are echoed at the end of the session."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

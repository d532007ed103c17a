import numpy as np
import pytest

from meld.moments import DirichletPrior


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def prior3():
    return DirichletPrior.symmetric(3, 0.1)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the criterion is not met."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)

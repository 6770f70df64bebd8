import numpy as np
import pytest

from kfpspec.fullop import GridSpec
from kfpspec.hermite import HermiteTruncation


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec.symmetric(12.0, 48)


@pytest.fixture(scope="session")
def trunc12():
    return HermiteTruncation(12)


@pytest.fixture(scope="session")
def trunc64():
    return HermiteTruncation(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance verdicts --------------------------------------------------------

_VERDICTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(number, title, passed, detail)."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _VERDICTS[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, passed, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
    passed = sum(v[1] for v in _VERDICTS.values())
    terminalreporter.write_line(f"{passed}/{len(_VERDICTS)} criteria pass")

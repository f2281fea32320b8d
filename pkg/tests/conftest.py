import pytest

import helpers


@pytest.fixture
def quartic():
    return helpers.quartic()


@pytest.fixture
def scalar():
    return helpers.scalar()


@pytest.fixture
def bilinear_growth():
    return helpers.bilinear_growth()


@pytest.fixture
def time_scaling():
    return helpers.time_scaling()


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL summary for an acceptance criterion, then assert it."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        print(line)
        _VERDICTS.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

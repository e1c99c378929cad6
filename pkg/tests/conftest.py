from pathlib import Path

import pytest

from crtwin.oracle import load_spec, realize

PRESETS = Path(__file__).resolve().parents[1] / "src" / "crtwin" / "presets"


@pytest.fixture(scope="session")
def presets():
    return PRESETS


@pytest.fixture(scope="session")
def mixed_spec():
    return load_spec(PRESETS / "mixed_ics.toml")


@pytest.fixture(scope="session")
def type1_spec():
    return load_spec(PRESETS / "type1_ics.toml")


@pytest.fixture(scope="session")
def mixed_trial(mixed_spec):
    return realize(mixed_spec)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

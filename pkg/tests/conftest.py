from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from builders import write_multiwoz  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def mwoz_dir(tmp_path: Path) -> Path:
    return write_multiwoz(tmp_path / "multiwoz")


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)

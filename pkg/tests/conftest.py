from __future__ import annotations

import sys
from pathlib import Path

import pytest

from lifty.corpus import fixtures

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

BENCHMARKS = [f for f in fixtures(FIXTURES) if f.name.startswith("b")]
BY_NAME = {f.name: f for f in fixtures(FIXTURES)}


def load(name: str, which: str = "leaky"):
    """(module, program, first function) of a fixture."""
    module, program = BY_NAME[name].load(which)
    return module, program, program.functions[-1]


@pytest.fixture
def edas():
    return load("edas")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)

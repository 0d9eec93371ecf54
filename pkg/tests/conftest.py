import json
from pathlib import Path

import pytest

import dpsmc

MODELS = Path(dpsmc.__file__).parent / "models"


def bundled(name: str) -> str:
    return (MODELS / f"{name}.json").read_text(encoding="utf-8")


def doc(obj) -> str:
    return json.dumps(obj)


@pytest.fixture
def models_dir():
    return MODELS


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

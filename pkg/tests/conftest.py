from __future__ import annotations

import shutil
import sys
from pathlib import Path

import hypothesis
import pytest

from sumofchecks.registry import Check, CheckRegistry, Criterion, default_cvs_registry

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.load_profile("ci")

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "synthetic"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def registry() -> CheckRegistry:
    return default_cvs_registry()


@pytest.fixture
def fixture_dir(tmp_path) -> Path:
    """A private copy of the synthetic fixture (tests may write next to it)."""
    dst = tmp_path / "synthetic"
    shutil.copytree(FIXTURE, dst)
    return dst


def make_criterion(weights, criterion_id=1, threshold=0.5) -> Criterion:
    checks = tuple(
        Check(f"k{j}", f"question {j}?", "anatomical-visibility", w) for j, w in enumerate(weights)
    )
    return Criterion(criterion_id, f"crit {criterion_id}", "statement", checks, threshold)


# --- acceptance summary: one PASS/FAIL line per criterion --------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and "::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or report.outcome != "passed":
            _acceptance.setdefault(name, report.outcome.upper())


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{_acceptance[name]:<7} {name}")

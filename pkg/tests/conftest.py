import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from foray.ir import load_protocol
from foray.sim import load_state_file
from foray.solver import SolverSession, solver_available

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
TRANSCRIPTS = FIXTURES / "transcripts"
GOLDEN = FIXTURES / "golden"

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("dev", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))

# Fixture-driven solver queries come from recorded transcripts unless the
# environment asks otherwise (record to refresh them, live to bypass them).
SOLVER_MODE = os.environ.get("FORAY_SOLVER_MODE", "auto")

requires_z3 = pytest.mark.skipif(not solver_available(), reason="z3 not on PATH")


@pytest.fixture(scope="session")
def mumug():
    return load_protocol(FIXTURES / "mumug.ir")


@pytest.fixture(scope="session")
def mumug_state():
    return load_state_file(FIXTURES / "mumug.state")


@pytest.fixture(scope="session")
def patched_state():
    return load_state_file(FIXTURES / "mumug_patched.state")


@pytest.fixture
def fixture_session():
    """Solver for queries over the bundled fixtures (replayable)."""
    with SolverSession(mode=SOLVER_MODE, transcripts=TRANSCRIPTS) as s:
        yield s


@pytest.fixture(scope="module")
def live_session():
    """Solver for randomized instances; these are never recorded."""
    if not solver_available():
        pytest.skip("z3 not on PATH")
    with SolverSession(mode="live") as s:
        yield s


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, title: str, passed: bool, detail: str = ""):
        _ACCEPTANCE.setdefault(number, []).append((title, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        for title, passed, detail in _ACCEPTANCE[number]:
            line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
            if detail:
                line += f" ({detail})"
            terminalreporter.write_line(line)

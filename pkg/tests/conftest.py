import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gainrag.lm_backend import MockBackend, MockLMSpec  # noqa: E402
from gainrag.retrieval import Passage  # noqa: E402

VOCAB4 = ["paris", "london", "rome", "berlin"]


@pytest.fixture(scope="session")
def paris_spec():
    """Uniform over four cities, except P(paris) = 0.5 whenever "paris-doc" is in context."""
    rule = {"paris": 0.5, "london": 1 / 6, "rome": 1 / 6, "berlin": 1 / 6}
    return MockLMSpec.uniform(VOCAB4, rules=[("paris-doc", rule)],
                              completions=[("capital of France", "Paris")])


@pytest.fixture(scope="session")
def paris_backend(paris_spec):
    return MockBackend(paris_spec)


@pytest.fixture(scope="session")
def paris_doc():
    return Passage("p1", "paris-doc")


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the terminal summary."""
    def report(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import sys
from pathlib import Path

import numpy as np
import pytest

from astenet import numerics as nx

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def f64():
    with nx.precision(64):
        yield


@pytest.fixture
def toy_corpus_path():
    return FIXTURES / "toy_corpus.txt"


@pytest.fixture
def toy_embeddings_path():
    return FIXTURES / "toy_embeddings.txt"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance():
    """Call with (criterion label, passed, detail) to add a line to the summary."""
    def record(label, passed, detail=""):
        _ACCEPTANCE.append((label, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  {detail}")

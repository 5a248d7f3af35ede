import numpy as np
import pytest

from ezpipe.reference import ToyCorpusSpec, generate_toy_corpus

# Filled by test_acceptance.py; one (criterion, passed, detail) tuple per check.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_toy_corpus(ToyCorpusSpec(n_utts=40, n_classes=4, seed=3), out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import pytest

from hetfuzz.cli import data_path
from hetfuzz.extractor import load_manifest
from hetfuzz.grammar import load_grammar_file
from hetfuzz.minisim import BUG_IDS, BackendConfig
from hetfuzz.seedgen import load_corpus

HOST = BackendConfig("host")
DEVICE = BackendConfig("device")
ALL_BUGS = frozenset(BUG_IDS)


@pytest.fixture(scope="session")
def grammar():
    return load_grammar_file(data_path("grammar.json"))


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(data_path("seeds"))


@pytest.fixture(scope="session")
def seeds(corpus):
    return [text for _, text in corpus]


@pytest.fixture(scope="session")
def manifest():
    return load_manifest(data_path("manifest.json"))


_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

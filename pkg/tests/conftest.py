from importlib import resources
from pathlib import Path

import pytest

from relink.corpus import ingest_corpus
from relink.erindex import build_index
from relink.extraction import extract_corpus

DATA = Path(resources.files("relink") / "data")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def toy_docs():
    return list(ingest_corpus(DATA / "toy_corpus.jsonl"))


@pytest.fixture(scope="session")
def toy_units(toy_docs):
    return list(extract_corpus(toy_docs))


@pytest.fixture(scope="session")
def toy_index(toy_units):
    return build_index(toy_units)


def write_jsonl(path, records):
    import json

    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
                    encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)

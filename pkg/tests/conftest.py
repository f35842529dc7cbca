import json
import shutil
from pathlib import Path

import pytest

from aspectqa.gateway import Gateway, HashEmbedder, MockChatBackend
from aspectqa import simulate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def _make_gateway(script=None, fallback=None, concurrency=1, dim=64):
    return Gateway(MockChatBackend(script, fallback=fallback), HashEmbedder(dim), concurrency=concurrency,
                   sleep=lambda s: None)


@pytest.fixture
def make_gateway():
    """Factory for offline gateways: ``make_gateway(script, fallback=None)``."""
    return _make_gateway


@pytest.fixture
def mock_gateway():
    """Gateway whose chat side answers with the rule-based simulator."""
    return _make_gateway(fallback=simulate.respond)


@pytest.fixture
def corpus(tmp_path):
    """Copy of the 3-book fixture corpus plus a mock config, in a temp dir."""
    root = tmp_path / "corpus"
    shutil.copytree(FIXTURES / "books", root / "books")
    shutil.copy(FIXTURES / "manifest.json", root / "manifest.json")
    cfg = {"corpus_manifest": "manifest.json", "output_dir": "out", "gateway": {"kind": "mock"}}
    (root / "config.json").write_text(json.dumps(cfg))
    return root


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL/SKIP line per acceptance criterion."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

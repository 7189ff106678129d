from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def bundle_config():
    from intentclar.fixtures import FixtureBundle

    b = FixtureBundle()
    return b, b.config()


@pytest.fixture(scope="session")
def golden_dialogues():
    from intentclar.fixtures import FixtureBundle
    from intentclar.model import DialogueRecord
    from intentclar.util import read_jsonl

    rows = read_jsonl(FixtureBundle().goldens / "dialogues.jsonl")
    return {r["record_id"]: DialogueRecord.from_dict(r) for r in rows}


@pytest.fixture(scope="session")
def bundle_gateway():
    """Live gateway answering from the fixture script, no network."""
    from intentclar.fixtures import FixtureBundle, ScriptedResponder
    from intentclar.gateway import Gateway, GatewayConfig, Mode, record_transport
    from intentclar.util import read_jsonl

    b = FixtureBundle()
    responder = ScriptedResponder(b.script(), list(read_jsonl(b.seed_records)))
    return Gateway(GatewayConfig(mode=Mode.LIVE), transport=record_transport(responder))

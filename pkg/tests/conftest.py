import json
from pathlib import Path

import pytest

from kvsched.engine import CostModel
from kvsched.workload import RequestSpec

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name: str) -> dict:
    data = json.loads((FIXTURES / name).read_text())
    data["workload"] = [RequestSpec(**r) for r in data["workload"]]
    data["cost"] = CostModel(**data["cost"])
    return data


@pytest.fixture
def overflow_case():
    return load_fixture("overflow_scenario.json")


@pytest.fixture
def single_case():
    return load_fixture("single_request_trace.json")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[cid])

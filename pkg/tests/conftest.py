import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eetwin.casestudy import build_case_study, plant_config, reliability_table  # noqa: E402


@pytest.fixture(scope="session")
def case_study():
    return build_case_study()


@pytest.fixture(scope="session")
def table():
    return reliability_table()


@pytest.fixture(scope="session")
def config():
    return plant_config()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def rules():
    from avconsensus.normalize import default_ruleset

    return default_ruleset()


@pytest.fixture(scope="session")
def small_synth():
    from avconsensus.synth import synthetic_dataset

    ds, truth = synthetic_dataset(n_apps=400, n_engines=8, seed=3)
    return ds, truth


@pytest.fixture
def write_csv(tmp_path):
    def _write(text: str, name: str = "d.csv") -> Path:
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    return _write


def pytest_terminal_summary(terminalreporter):
    gate = sys.modules.get("test_acceptance")
    if gate is None or not gate.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in gate.summary_lines():
        terminalreporter.write_line(line)

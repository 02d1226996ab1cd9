from pathlib import Path

import numpy as np
import pytest

from confidence_nets.ensemble import ModelConfig
from confidence_nets.gbt import TreeParams
from confidence_nets.nn import TrainConfig

DATA_DIR = Path(__file__).parent / "data"
REPO_DATA = Path(__file__).parents[1] / "data"
CONCRETE_CSV = REPO_DATA / "concrete_compressive_strength.csv"
CONCRETE_MANIFEST = REPO_DATA / "concrete.manifest"
FIXTURE20 = DATA_DIR / "fixture20.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fast_config():
    """Small enough that a full two-phase fit takes well under a second."""
    return ModelConfig(TrainConfig(epochs=30, batch_size=8, hidden_units=16, conv_channels=4),
                       TreeParams(n_trees=20, max_depth=3))


@pytest.fixture
def fixture20():
    return FIXTURE20


# acceptance criteria report: one PASS/FAIL line per test marked with criterion(n, title)
_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

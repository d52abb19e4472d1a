import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hetnet_sim.network import NetworkConfig, generate_channels, generate_topology  # noqa: E402

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "criterion", None)
    if marker is not None:
        number, title = marker
        prev = _CRITERIA.get(number, (title, True, ""))
        detail = getattr(report, "criterion_detail", "") or prev[2]
        _CRITERIA[number] = (title, prev[1] and report.passed, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)
        report.criterion_detail = getattr(item, "criterion_detail", "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the criterion's report line."""
    def record(text):
        request.node.criterion_detail = text
    return record


@pytest.fixture
def small_config():
    return NetworkConfig(K=2, Q=3, I=2, M=2, N=2, P=1.0, seed=11)


@pytest.fixture
def small_channels(small_config):
    return generate_channels(generate_topology(small_config), small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

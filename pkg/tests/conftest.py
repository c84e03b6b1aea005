import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_raw():
    """A fast experiment config (few rounds, small data) as a raw dict."""
    return {
        "seed": 3,
        "rounds": 5,
        "num_honest": 4,
        "data": {"num_classes": 4, "input_dim": 6, "per_class": 10},
        "aggregator": "fedavg",
    }


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the criterion's summary line."""

    def note(text):
        request.node.criterion_detail = text

    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    detail = getattr(item, "criterion_detail", "")
    item.config.stash.setdefault(_RESULTS, {})[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))

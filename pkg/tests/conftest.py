import numpy as np
import pytest

from pwoa.data import one_hot, synth_blobs
from pwoa.nn import NetworkModel


def small_net(seed=0, sizes=(4, 6, 3)):
    """2-layer relu net with at most 200 parameters and non-degenerate biases."""
    model = NetworkModel.init(list(sizes), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for layer in model.layers:
        layer.bias[:] = rng.normal(0, 0.1, layer.bias.shape)
    return model


@pytest.fixture
def net():
    return small_net()


@pytest.fixture
def batch():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (8, 4))
    y = one_hot(rng.integers(0, 3, 8), 3)
    return x, y


@pytest.fixture
def blobs():
    return synth_blobs(seed=3, n=240, d=4, k=3, margin=0.3)


# acceptance criteria bookkeeping: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.setdefault(marker.args[0], []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(_CRITERIA[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")

from __future__ import annotations

import functools

import pytest

from subroute.harness.generator import GeneratorConfig, synthetic_workload

ACCEPTANCE_SEEDS = (1, 2, 3, 4, 5)

_results: dict[int, tuple[str, str]] = {}


@functools.lru_cache(maxsize=None)
def calibrated_workload(seed: int, n: int = 2000):
    return synthetic_workload(GeneratorConfig(seed=seed, n_requests=n))


@pytest.fixture(scope="session")
def small_workload():
    return synthetic_workload(GeneratorConfig(seed=7, n_requests=120))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _results[number] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, status = _results[number]
        terminalreporter.write_line(f"{status}  criterion {number:>2}: {title}")

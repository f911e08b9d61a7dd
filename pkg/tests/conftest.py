"""Shared fixtures and the acceptance summary printed at the end of a run."""

import time

import numpy as np
import pytest

from voidfwi.config import load_config, preset_path
from voidfwi.experiments import generate_observations, run_inversion_experiment

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    details = [v for k, v in report.user_properties if k == "detail"]
    _VERDICTS[number] = (title, report.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, ok, details = _VERDICTS[number]
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}")
        for d in details:
            tr.write_line(f"      {d}")


@pytest.fixture
def detail(record_property):
    """Attach a line of evidence to the acceptance summary (and echo it)."""

    def add(text):
        print(text)
        record_property("detail", text)

    return add


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# desk-scale circular void: observations and inversions are shared per session

@pytest.fixture(scope="session")
def desk_config():
    return load_config(preset_path("desk_circle_rho"))


@pytest.fixture(scope="session")
def desk_observations(desk_config):
    t0 = time.perf_counter()
    obs = generate_observations(desk_config)
    obs.metadata["wall_time_s"] = time.perf_counter() - t0
    return obs


@pytest.fixture(scope="session")
def desk_inversion(desk_observations):
    cache = {}

    def run(tag):
        if tag not in cache:
            cfg = load_config(preset_path("desk_circle_rho"), [f"material.tag={tag}"])
            t0 = time.perf_counter()
            res = run_inversion_experiment(cfg, desk_observations)
            cache[tag] = (res, time.perf_counter() - t0)
        return cache[tag]

    return run

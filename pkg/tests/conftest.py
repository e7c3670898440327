import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cpopt.objective import TimeAggregates, normalized_weights
from cpopt.rng import replication_seed
from cpopt.scenario import ScenarioConfig, generate_scenario

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_instance(n_helpers, rep, seed=11):
    cfg = ScenarioConfig(n_helpers=n_helpers)
    sc = generate_scenario(cfg, replication_seed(seed, rep))
    agg = TimeAggregates.from_scenario(sc, cfg.effective_r_max)
    return sc, agg, normalized_weights(agg, sc.camera)


@pytest.fixture
def small_instance():
    return make_instance(6, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""

    def _report(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:2d} {name}: {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])

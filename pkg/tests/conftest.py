import sys

import numpy as np
import pytest
from hypothesis import settings

from olfc.config import load_bundled
from olfc.engine import Scenario
from olfc.system import ClosedLoop

settings.register_profile("olfc", deadline=None, max_examples=60)
settings.load_profile("olfc")

PL0 = np.array([1.3, 2.0, 1.3, 0.5])
PL1 = np.array([1.4, 2.1, 1.4, 0.55])


@pytest.fixture(scope="session")
def cfg():
    return load_bundled()


@pytest.fixture(scope="session")
def plant(cfg):
    return cfg.plant


@pytest.fixture(scope="session")
def loop(plant):
    return ClosedLoop.at_load(plant)


@pytest.fixture(scope="session")
def loop_post(plant):
    return ClosedLoop.at_load(plant, PL1)


@pytest.fixture(scope="session")
def scenario(cfg):
    return Scenario(cfg.plant, cfg.schedule)


def perturbed(loop, rng, scale=0.02, v_max=0.3):
    """Random state near the loop's equilibrium with a non-negative wind deviation."""
    z = loop.equilibrium() + rng.normal(scale=scale, size=loop.layout.size)
    z[loop.layout.wind_indices] = rng.uniform(0.0, v_max, loop.layout.nw)
    return z


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])

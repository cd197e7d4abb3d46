"""Shared fixtures: small scenarios and a simulated history with beliefs.

Everything here is deterministic.  Fixtures that simulate use fixed seeds so
expected values frozen into tests stay valid across runs and platforms.
"""

import numpy as np
import pytest

from semgeo.harness import load_scenario
from semgeo.oracles import build_history_beliefs


@pytest.fixture(scope="session")
def oracle_small():
    """Two objects, two classes: 4 joint hypotheses, cheap to enumerate."""
    return load_scenario("oracle_small")


@pytest.fixture(scope="session")
def defaults_scenario():
    return load_scenario("defaults")


@pytest.fixture(scope="session")
def planning_scenario():
    return load_scenario("planning")


@pytest.fixture(scope="session")
def seeded_history(oracle_small):
    """(world, history, hybrid, analytic, streams) after 3 update steps."""
    return build_history_beliefs(oracle_small, 3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(123)

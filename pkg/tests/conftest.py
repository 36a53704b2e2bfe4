import sys

import numpy as np
import pytest
from hypothesis import settings

from gmfg.functions import Constant
from gmfg.limit import ModelParams, TimeGrid, solve_limit
from gmfg.spectral import analytic_eigenpairs

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ns_params():
    """Network-security parameters (Sigma = 1, T = 1)."""
    return ModelParams.network_security()


@pytest.fixture(scope="session")
def grid200():
    return TimeGrid(1.0, 200)


@pytest.fixture(scope="session")
def ns_basis():
    return analytic_eigenpairs("sinusoidal", mu=Constant(1.0))


@pytest.fixture(scope="session")
def ns_solution(ns_params, ns_basis, grid200):
    return solve_limit(ns_params, ns_basis, grid200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

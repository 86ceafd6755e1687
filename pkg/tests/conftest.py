from __future__ import annotations

import numpy as np
import pytest

from urbandit.generators import acceptance_instance, dense, dominance
from urbandit.markov import validate_instance


@pytest.fixture
def two_arm():
    return acceptance_instance()


@pytest.fixture
def dom():
    return dominance()


@pytest.fixture
def single_arm():
    return validate_instance({"arms": [{"transition": [[0.9, 0.1], [0.1, 0.9]], "rewards": [1, 2]}]})


def random_instance(seed, K=2, S=2, low=0.1, high=0.9):
    return dense(K, S, seed=seed, low=low, high=high)


def random_stochastic(rng, n, low=0.0):
    M = rng.uniform(low, 1.0, (n, n)) + 1e-3
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(test_acceptance.RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())

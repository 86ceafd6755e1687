from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbandit.exceptions import (DomainError, ErgodicityError, NegativeEntryError, RowSumError,
                                 ValidationError)
from urbandit.markov import (BETA, ArmModel, c1_constant, check_transition_matrix,
                             ergodicity_certificate, expected_hitting_times,
                             product_difference_bound, stationary_distribution, tv_decay,
                             validate_instance)

from .conftest import random_stochastic


class TestValidateInstance:
    def test_uniform_single_arm(self):
        inst = validate_instance({"arms": [{"transition": [[0.5, 0.5], [0.5, 0.5]], "rewards": [1, 2]}]})
        assert inst.strictly_positive == (True,)
        assert inst.K == 1

    def test_identity_is_not_ergodic(self):
        with pytest.raises(ErgodicityError):
            validate_instance({"arms": [{"transition": [[1, 0], [0, 1]], "rewards": [0, 1]}]})

    def test_periodic_chain_rejected(self):
        with pytest.raises(ErgodicityError):
            validate_instance({"arms": [{"transition": [[0, 1], [1, 0]], "rewards": [0, 1]}]})

    def test_constants(self):
        inst = validate_instance({"arms": [
            {"transition": [[0.3, 0.7], [0.2, 0.8]], "states": [1, 2]},
            {"transition": [[0.6, 0.4], [0.5, 0.5]], "states": [0, 3]}]})
        assert inst.constants.S_max == 2
        assert inst.constants.r_max == 3.0
        assert inst.rewards[1].tolist() == [0.0, 3.0]

    def test_row_sum_error(self):
        with pytest.raises(RowSumError):
            validate_instance({"arms": [{"transition": [[0.5, 0.6], [0.5, 0.5]], "rewards": [0, 1]}]})

    def test_negative_entry(self):
        with pytest.raises(NegativeEntryError):
            check_transition_matrix([[1.2, -0.2], [0.5, 0.5]])

    def test_errors_are_validation_errors(self):
        assert issubclass(RowSumError, ValidationError)
        assert issubclass(ValidationError, ValueError)

    def test_labels_and_qualified_states(self):
        inst = validate_instance({"arms": [
            {"transition": [[0.5, 0.5], [0.5, 0.5]], "states": ["lo", "hi"], "rewards": [0, 1],
             "name": "a"},
            {"transition": [[0.5, 0.5], [0.5, 0.5]], "states": ["lo", "hi"], "rewards": [0, 1],
             "name": "b"}]})
        assert inst.qualified_state(0, 1) != inst.qualified_state(1, 1)
        assert inst.arms[0].index_of("hi") == 1
        with pytest.raises(DomainError):
            inst.arms[0].index_of("mid")

    def test_arrays_are_read_only(self, two_arm):
        with pytest.raises(ValueError):
            two_arm.transitions[0][0, 0] = 0.5

    def test_from_labels(self):
        arm = ArmModel.from_labels([1, 2], [[0.5, 0.5], [0.5, 0.5]])
        assert arm.rewards.tolist() == [1.0, 2.0]


class TestStationary:
    @pytest.mark.parametrize("P, pi", [
        ([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]),
        ([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5]),
        ([[0.7, 0.3], [0.4, 0.6]], [4 / 7, 3 / 7]),
    ])
    def test_examples(self, P, pi):
        np.testing.assert_allclose(stationary_distribution(P), pi, atol=1e-12)

    def test_two_state_closed_form(self, rng):
        for _ in range(50):
            a, b = rng.uniform(0.01, 0.99, 2)
            P = [[1 - a, a], [b, 1 - b]]
            np.testing.assert_allclose(stationary_distribution(P), [b / (a + b), a / (a + b)],
                                       atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10**6))
    def test_fixed_point(self, n, seed):
        P = random_stochastic(np.random.default_rng(seed), n)
        pi = stationary_distribution(P)
        assert abs(pi.sum() - 1) < 1e-12
        np.testing.assert_allclose(pi @ P, pi, atol=1e-10)


class TestHittingTimes:
    def test_geometric(self):
        assert expected_hitting_times([[0.5, 0.5], [0.5, 0.5]])[0, 1] == pytest.approx(2.0)
        assert expected_hitting_times([[0.9, 0.1], [0.3, 0.7]])[0, 1] == pytest.approx(10.0)

    def test_example_against_monte_carlo(self):
        P = np.array([[0.7, 0.3], [0.4, 0.6]])
        H = expected_hitting_times(P)
        assert H[1, 0] == pytest.approx(2.5)
        # simulate 10^6 chains from state 1 until they first reach state 0
        rng = np.random.default_rng(0)
        n = 10**6
        state = np.ones(n, dtype=int)
        steps = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        while alive.any():
            idx = np.flatnonzero(alive)
            u = rng.random(idx.size)
            state[idx] = (u >= P[state[idx], 0]).astype(int)
            steps[idx] += 1
            alive[idx] = state[idx] != 0
        assert abs(steps.mean() - 2.5) < 0.01

    def test_return_times(self, rng):
        P = random_stochastic(rng, 4)
        H = expected_hitting_times(P)
        np.testing.assert_allclose(np.diag(H), 1 / stationary_distribution(P))


class TestCertificate:
    def test_symmetric_chain_rate(self):
        inst = validate_instance({"arms": [{"transition": [[0.9, 0.1], [0.1, 0.9]], "rewards": [0, 1]}]})
        cert = ergodicity_certificate(inst)
        d = tv_decay(inst.transitions[0], horizon=20)
        np.testing.assert_allclose(d, 0.8 ** np.arange(21), atol=1e-12)
        assert cert.arms[0].rho == pytest.approx(0.8)
        assert cert.arms[0].C >= 1 - 1e-12

    def test_one_step_mixing(self):
        inst = validate_instance({"arms": [{"transition": [[0.5, 0.5], [0.5, 0.5]], "rewards": [0, 1]}]})
        cert = ergodicity_certificate(inst)
        a = cert.arms[0]
        assert a.decay[1] == pytest.approx(0.0, abs=1e-15)
        assert a.C >= a.decay[0]
        assert 0 < a.rho < 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 10**6))
    def test_envelope_dominates(self, n, seed):
        P = random_stochastic(np.random.default_rng(seed), n, low=0.05)
        inst = validate_instance({"arms": [{"transition": P.tolist(), "rewards": [0] * n}]})
        a = ergodicity_certificate(inst).arms[0]
        t = np.arange(65)
        assert np.all(a.decay[:65] <= a.C * a.rho ** t + 1e-9)

    def test_t_max_covers_hitting_times(self, two_arm):
        cert = ergodicity_certificate(two_arm)
        assert cert.T_max >= max(a.hitting.max() for a in cert.arms)

    def test_c1(self):
        assert c1_constant(1.0, 0.5) == pytest.approx(2.0)
        assert c1_constant(1.0, 0.5, t=1) == pytest.approx(1.0)
        # C > 1: t_hat = ceil(log_rho(1/C))
        C, rho = 4.0, 0.5
        assert c1_constant(C, rho) == pytest.approx(2 + C * rho ** 2 / (1 - rho))

    def test_beta(self):
        assert BETA == pytest.approx(math.pi ** 2 / 6, abs=1e-12)


class TestProductBound:
    def test_identity_case(self):
        assert product_difference_bound([0.3, 0.7], [0.3, 0.7]) == (0.0, 0.0)

    def test_arithmetic(self):
        lhs, rhs = product_difference_bound([0.9, 0.9], [1.0, 1.0])
        assert lhs == pytest.approx(0.19)
        assert rhs == pytest.approx(0.2)

    def test_domain(self):
        with pytest.raises(DomainError):
            product_difference_bound([1.2], [0.5])
        with pytest.raises(DomainError):
            product_difference_bound([0.2, 0.3], [0.5])

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=6))
    def test_property(self, pairs):
        a, b = zip(*pairs)
        lhs, rhs = product_difference_bound(a, b)
        assert lhs <= rhs + 1e-15

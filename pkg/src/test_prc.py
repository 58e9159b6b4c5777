import math

import numpy as np
import pytest

from errors import PrcError
from prc import (adapt_threshold, corrected_log_weight, corrected_weight, estimate_r, prc_propagate,
                 threshold_for_step)
from schema import PrcConfig, ThresholdPolicy


def _constant_weight(log_w):
    def propose(x_prev, rng):
        return x_prev + rng.standard_normal(x_prev.shape)

    def weigh(x_prev, x, rng):
        return np.full(x.shape, log_w)

    return propose, weigh


def _uniform_weight():
    # w~(x) = x with x ~ U(0, 1)
    def propose(x_prev, rng):
        return rng.uniform(size=x_prev.shape)

    def weigh(x_prev, x, rng):
        with np.errstate(divide='ignore'):
            return np.log(x)

    return propose, weigh


def test_zero_threshold_accepts_the_first_draw(rng):
    propose, weigh = _constant_weight(-50.0)
    result = prc_propagate(np.zeros(100), -np.inf, propose, weigh, PrcConfig(), rng)
    np.testing.assert_array_equal(result.attempts, np.ones(100))
    assert not result.capped.any()


def test_weights_above_threshold_accept_in_one_attempt(rng):
    propose, weigh = _constant_weight(math.log(3.0))
    result = prc_propagate(np.zeros(100), math.log(2.0), propose, weigh, PrcConfig(), rng)
    np.testing.assert_array_equal(result.attempts, np.ones(100))


def test_half_threshold_weight_needs_two_attempts_on_average(rng):
    c = 4.0
    propose, weigh = _constant_weight(math.log(c / 2))
    result = prc_propagate(np.zeros(10000), math.log(c), propose, weigh, PrcConfig(max_attempts=1000), rng)
    # geometric with p = 1/2: mean 2, variance 2
    se = math.sqrt(2.0 / 10000)
    assert abs(result.attempts.mean() - 2.0) <= 4 * se
    assert not result.capped.any()


def test_attempt_cap_accepts_the_last_draw_and_flags_it(rng):
    propose, weigh = _constant_weight(-np.inf)
    result = prc_propagate(np.zeros(20), 0.0, propose, weigh, PrcConfig(max_attempts=5), rng)
    np.testing.assert_array_equal(result.attempts, np.full(20, 5))
    assert result.capped.all()


def test_capped_flag_matches_attempt_count(rng):
    propose, weigh = _uniform_weight()
    result = prc_propagate(np.zeros(500), math.log(0.5), propose, weigh, PrcConfig(max_attempts=2), rng)
    np.testing.assert_array_equal(result.capped, result.attempts == 2)
    assert result.attempts.max() <= 2


def test_ancestor_redraw_replaces_parents_of_rejected_moves(rng):
    propose, weigh = _uniform_weight()
    calls = []

    def redraw(count, rng):
        calls.append(count)
        return np.full(count, 7), np.full(count, 70.0)

    result = prc_propagate(np.zeros(200), math.log(0.9), propose, weigh, PrcConfig(), rng,
                           ancestors=np.arange(200), redraw_ancestors=redraw)
    redrawn = result.attempts > 1
    assert calls and redrawn.any()
    np.testing.assert_array_equal(result.ancestors[redrawn], 7)
    np.testing.assert_array_equal(result.x_prev[redrawn], 70.0)
    np.testing.assert_array_equal(result.ancestors[~redrawn], np.arange(200)[~redrawn])


@pytest.mark.parametrize("w_tilde,expected", [(2.0, 2.0 * 0.7), (0.25, 1.0 * 0.7)])
def test_corrected_weight_branches(w_tilde, expected):
    assert corrected_weight(w_tilde, 1.0, 0.7) == pytest.approx(expected)


def test_corrected_weight_identity(rng):
    w = rng.exponential(size=1000)
    c = rng.exponential(size=1000)
    r = rng.uniform(0.1, 1.0, size=1000)
    got = np.array([corrected_weight(*args) for args in zip(w, c, r)])
    np.testing.assert_allclose(got, r * np.maximum(w, c), rtol=1e-12)
    np.testing.assert_allclose(np.exp(corrected_log_weight(np.log(w), np.log(c), np.log(r))),
                               r * np.maximum(w, c), rtol=1e-12)


def test_corrected_weight_of_a_zero_weight_particle():
    # a capped draw may carry w~ = 0; it still gets the floor r c_n
    assert corrected_weight(0.0, 0.5, 0.8) == pytest.approx(0.4)
    assert corrected_weight(0.0, 0.0, 0.8) == 0.0


def test_corrected_weight_needs_r_for_positive_threshold():
    with pytest.raises(PrcError):
        corrected_weight(0.5, 1.0, None)
    assert corrected_weight(0.5, 1.0, None, r_cancels=True) == pytest.approx(1.0)
    assert corrected_weight(0.5, 0.0, None) == 0.5


def test_estimate_r_is_one_without_threshold(rng):
    propose, weigh = _uniform_weight()
    state = rng.bit_generator.state
    np.testing.assert_array_equal(estimate_r(-np.inf, np.zeros(5), propose, weigh, 10, rng), np.ones(5))
    assert rng.bit_generator.state == state


def test_estimate_r_above_the_weight_supremum(rng):
    # c >= sup w~ so min{1, w~/c} = w~/c and r = E[U] / 2
    propose, weigh = _uniform_weight()
    M = 100000
    r_hat = estimate_r(math.log(2.0), np.zeros(1), propose, weigh, M, rng)[0]
    se = (1 / math.sqrt(12)) / 2 / math.sqrt(M)
    assert abs(r_hat - 0.25) <= 4 * se


def test_estimate_r_rejects_zero_draws(rng):
    propose, weigh = _uniform_weight()
    with pytest.raises(PrcError):
        estimate_r(0.0, np.zeros(3), propose, weigh, 0, rng)


def test_adapt_threshold_order_statistic():
    weights = np.arange(1, 101, dtype=float)
    assert adapt_threshold(weights, 0.1) == 10.0
    assert adapt_threshold(weights, 0.0) == 1.0
    assert adapt_threshold(np.full(10, 3.5), 0.4) == 3.5
    assert adapt_threshold(np.log(weights), 0.1) == pytest.approx(math.log(10.0))


def test_threshold_policies():
    log_w = np.log(np.array([0.2, 0.4, 0.6]))
    assert threshold_for_step(PrcConfig(), log_w) == -np.inf
    assert threshold_for_step(PrcConfig(threshold_policy="fixed", c=0.0), log_w) == -np.inf
    assert threshold_for_step(PrcConfig(threshold_policy="fixed", c=0.5), log_w) == pytest.approx(math.log(0.5))

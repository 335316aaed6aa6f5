"""Tests for the exact oracles and the bias, variance and truncation diagnostics."""

import numpy as np
import pytest

from mopg.envs import make_bandit, make_cycle, make_queuing, make_synthetic_two_state, make_wireless
from mopg.errors import ArgumentError, UnsupportedEnvironmentError
from mopg.mdp import DiscountSchedule
from mopg.oracle import (
    bias_existence,
    enumerate_trajectories,
    estimate_variance,
    estimator_check,
    exact_gradient,
    exact_jacobian,
    exact_returns,
    log_log_slope,
    measure_bias_terms,
    reference_horizon,
    state_marginals,
    truncation_gap,
)
from mopg.policy import PolicyParams, init_policy
from mopg.utility import UtilitySpec, partials

THETA = np.array([[0.3, -0.2], [-0.1, 0.4]])


def test_marginals_start_at_initial_distribution():
    """d_0 = rho and every row sums to one."""
    env = make_synthetic_two_state()
    marginals = state_marginals(env.model, PolicyParams(THETA), 6)
    np.testing.assert_allclose(marginals[0], env.model.initial)
    np.testing.assert_allclose(marginals.sum(axis=1), 1.0, atol=1e-10)


def test_marginals_on_cycle():
    """A point start on a cycle gives point masses moving one step at a time."""
    env = make_cycle(4, start=1)
    marginals = state_marginals(env.model, init_policy(4, 2), 6)
    for t in range(6):
        np.testing.assert_array_equal(marginals[t], np.eye(4)[(1 + t) % 4])


def test_marginals_match_enumeration():
    """Path enumeration reproduces the marginals and J_H at H=3."""
    env = make_synthetic_two_state()
    policy = PolicyParams(THETA)
    paths = enumerate_trajectories(env.model, policy, 3)
    assert sum(p for p, _ in paths) == pytest.approx(1.0, abs=1e-12)
    marginals = state_marginals(env.model, policy, 3)
    for t in range(3):
        freq = sum(p for p, tr in paths if tr.states[t] == 0)
        assert freq == pytest.approx(marginals[t, 0], abs=1e-12)
    schedule = DiscountSchedule(0.9, 3)
    j_enum = sum(p * (schedule.discounts @ tr.rewards) for p, tr in paths)
    np.testing.assert_allclose(j_enum, exact_returns(env.model, policy, schedule).j_exact, atol=1e-12)


def test_exact_returns_examples():
    """Zero rewards give zero; constant 1 at gamma 0.5 over three steps gives 1.75."""
    zero = make_cycle(3, reward=0.0)
    np.testing.assert_array_equal(
        exact_returns(zero.model, init_policy(3, 2), DiscountSchedule(0.5, 3)).j_exact, [0.0])
    ones = make_cycle(3, reward=1.0)
    result = exact_returns(ones.model, init_policy(3, 2), DiscountSchedule(0.5, 3))
    np.testing.assert_allclose(result.j_exact, [1.75])
    assert result.horizon_used == 3 and not result.infinite


def test_infinite_horizon_proxy():
    """The proxy reaches r / (1 - gamma) and rejects gamma = 1."""
    ones = make_cycle(2, reward=1.0)
    result = exact_returns(ones.model, init_policy(2, 2), DiscountSchedule(0.9, 5), infinite=True)
    np.testing.assert_allclose(result.j_exact, [10.0], atol=1e-9)
    assert result.infinite and result.horizon_used == reference_horizon(0.9, 1.0)
    with pytest.raises(ArgumentError):
        exact_returns(ones.model, init_policy(2, 2), DiscountSchedule(1.0, 5), infinite=True)


def test_reference_horizon_is_tight():
    """H_ref is the first horizon whose tail bound drops below the tolerance."""
    h = reference_horizon(0.9, 2.0, 1e-8)
    assert 2.0 * 0.9 ** h / 0.1 <= 1e-8
    assert 2.0 * 0.9 ** (h - 1) / 0.1 > 1e-8


def test_bandit_gradient_closed_form():
    """For a bandit the gradient of w . J is w (diag(pi) - pi pi^T) r."""
    env = make_bandit((0.2, 0.7, 0.4), low=0.0, high=1.0)
    theta = np.array([[0.3, -0.1, 0.5]])
    policy = PolicyParams(theta)
    u = UtilitySpec('weighted_sum', scale=2.0)
    grad = exact_gradient(env.model, policy, DiscountSchedule(0.9, 1), u)
    pi = policy.probabilities()[0]
    expected = 2.0 * (np.diag(pi) - np.outer(pi, pi)) @ np.array([0.2, 0.7, 0.4])
    np.testing.assert_allclose(grad, expected, atol=1e-8)


def test_gradient_scales_with_rewards():
    """Doubling rewards doubles the weighted_sum gradient."""
    policy = PolicyParams(np.array([[0.3, -0.1]]))
    u = UtilitySpec('weighted_sum')
    schedule = DiscountSchedule(0.9, 1)
    base = exact_gradient(make_bandit((0.2, 0.7), 0.25, 0.5).model, policy, schedule, u)
    doubled = exact_gradient(make_bandit((0.2, 0.7), 0.5, 1.0).model, policy, schedule, u)
    np.testing.assert_allclose(doubled, 2 * base, atol=1e-8)


def test_finite_difference_step_agreement():
    """Steps 1e-4 and 1e-5 agree to 1e-6 relative."""
    env = make_synthetic_two_state()
    policy = PolicyParams(THETA)
    schedule = DiscountSchedule(0.9, 20)
    u = UtilitySpec('sum_log')
    a = exact_gradient(env.model, policy, schedule, u, step=1e-4)
    b = exact_gradient(env.model, policy, schedule, u, step=1e-5)
    assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(b)


def test_jacobian_matches_finite_differences():
    """The backward-Q Jacobian agrees with the chain rule through finite differences."""
    env = make_synthetic_two_state()
    policy = PolicyParams(THETA)
    schedule = DiscountSchedule(0.9, 12)
    u = UtilitySpec('sum_log')
    j = exact_returns(env.model, policy, schedule).j_exact
    chain = partials(u, j) @ exact_jacobian(env.model, policy, schedule)
    np.testing.assert_allclose(chain, exact_gradient(env.model, policy, schedule, u), atol=1e-8)


def test_linear_utility_has_no_finite_sample_bias():
    """With weighted_sum the partials never move, so term I and its bound vanish."""
    env = make_synthetic_two_state()
    report = measure_bias_terms(env, PolicyParams(THETA), DiscountSchedule(0.9, 10),
                                UtilitySpec('weighted_sum'), n2=4, reps=200)
    assert report.term_I == 0.0 and report.magnitude_I == 0.0 and report.bound_I == 0.0
    assert report.term_II == 0.0
    assert all(report.within_bounds)


def test_reference_horizon_removes_truncation_terms():
    """At H = H_ref the truncation terms are zero."""
    env = make_synthetic_two_state()
    h_ref = reference_horizon(0.9, 1.0)
    report = measure_bias_terms(env, PolicyParams(THETA), DiscountSchedule(0.9, h_ref),
                                UtilitySpec('sum_log'), n2=4, reps=50)
    assert report.term_II == 0.0 and report.term_III == 0.0
    assert report.magnitude_II == 0.0 and report.magnitude_III == 0.0


@pytest.mark.parametrize('horizon', [5, 10, 20])
def test_bias_terms_within_bounds(horizon):
    """Measured terms stay under their bounds and the total obeys the triangle inequality."""
    env = make_synthetic_two_state()
    report = measure_bias_terms(env, PolicyParams(THETA), DiscountSchedule(0.9, horizon),
                                UtilitySpec('sum_log'), n2=16, reps=500, seed=horizon)
    assert all(report.within_bounds)
    assert report.triangle_holds
    row = report.as_row()
    assert row['H'] == horizon and row['N2'] == 16


def test_bias_requires_model():
    """Queuing without an exact model cannot be diagnosed."""
    env = make_queuing()
    with pytest.raises(UnsupportedEnvironmentError):
        measure_bias_terms(env, init_policy(env.spec.num_states, env.spec.num_actions),
                           DiscountSchedule(0.9, 5),
                           UtilitySpec('sum_log'), n2=4, reps=10)


@pytest.mark.slow
def test_finite_sample_bias_decays_like_inverse_sqrt():
    """Term I magnitude falls with log-log slope in [-0.75, -0.25] over N2 = 4..256."""
    env = make_synthetic_two_state()
    policy = PolicyParams(THETA)
    schedule = DiscountSchedule(0.9, 20)
    u = UtilitySpec('sum_log')
    sizes = [4, 16, 64, 256]
    magnitudes = [measure_bias_terms(env, policy, schedule, u, n2, reps=100_000, seed=7)
                  .magnitude_I
                  for n2 in sizes]
    slope = log_log_slope(sizes, magnitudes)
    assert -0.75 <= slope <= -0.25


def test_log_log_slope():
    """A pure power law recovers its exponent."""
    xs = np.array([1.0, 4.0, 16.0, 64.0])
    assert log_log_slope(xs, 3.0 * xs ** -0.5) == pytest.approx(-0.5)
    with pytest.raises(ArgumentError):
        log_log_slope([1.0], [1.0])


def test_variance_zero_cases():
    """No action choice or no reward means no gradient variance."""
    single_action = make_cycle(3, num_actions=1)
    assert estimate_variance(single_action, init_policy(3, 1), DiscountSchedule(0.9, 5),
                             UtilitySpec('sum_log'), n2=4, samples=50) == 0.0
    zero = make_cycle(3, reward=0.0)
    assert estimate_variance(zero, init_policy(3, 2), DiscountSchedule(0.9, 5),
                             UtilitySpec('weighted_sum'), n2=4, samples=50) == 0.0


def test_variance_needs_two_samples():
    """samples < 2 is an argument error."""
    env = make_synthetic_two_state()
    with pytest.raises(ArgumentError):
        estimate_variance(env, init_policy(2, 2), DiscountSchedule(0.9, 5), UtilitySpec('sum_log'),
                          n2=4, samples=1)


def test_variance_with_exact_partials():
    """Exact partials give a finite positive variance on the synthetic MDP."""
    env = make_synthetic_two_state()
    var = estimate_variance(env, PolicyParams(THETA), DiscountSchedule(0.9, 10),
                            UtilitySpec('sum_log'), n2=4, samples=2000, exact_partials=True)
    assert np.isfinite(var) and var > 0


@pytest.mark.slow
def test_variance_split_half_stability():
    """Two disjoint 10^5-sample batches agree within 10%."""
    env = make_synthetic_two_state()
    args = (env, PolicyParams(THETA), DiscountSchedule(0.9, 20), UtilitySpec('sum_log'), 64, 100_000)
    a = estimate_variance(*args, seed=1, exact_partials=True)
    b = estimate_variance(*args, seed=2, exact_partials=True)
    assert abs(a - b) <= 0.1 * max(a, b)


def test_truncation_gap_geometric_tail():
    """Constant reward 1 at gamma 0.5: the gap at H=2 is 0.5^2 / 0.5."""
    env = make_cycle(2, reward=1.0)
    (gap,) = truncation_gap(env.model, init_policy(2, 2), 0.5, [2])
    assert gap.gap == pytest.approx(0.5, abs=1e-9)
    assert gap.bound == pytest.approx(0.5)
    assert gap.within_bound


@pytest.mark.parametrize('make_env', [make_synthetic_two_state, make_wireless])
def test_truncation_gaps_under_bound(make_env):
    """Gaps at H = 5, 10, 20 stay under r_max gamma^H / (1 - gamma)."""
    env = make_env()
    policy = init_policy(env.spec.num_states, env.spec.num_actions, scale=0.5, seed=0)
    gaps = truncation_gap(env.tabular_model(), policy, 0.9, [5, 10, 20])
    assert [g.horizon for g in gaps] == [5, 10, 20]
    assert all(g.within_bound for g in gaps)
    assert gaps[0].gap > gaps[1].gap > gaps[2].gap


def test_truncation_gap_at_reference_horizon():
    """At H_ref the gap is below the tolerance."""
    env = make_synthetic_two_state()
    h_ref = reference_horizon(0.9, 1.0)
    (gap,) = truncation_gap(env.model, PolicyParams(THETA), 0.9, [h_ref])
    assert gap.gap <= 1e-10


def test_bias_existence_on_bandit():
    """One-sample returns bias the mean partial upwards for a convex partial."""
    env = make_bandit((0.5,), low=0.5, high=1.0)
    report = bias_existence(env, UtilitySpec('sum_log'), DiscountSchedule(0.9, 1), n2=1,
                            samples=20_000, seed=3)
    assert report.partial_at_mean[0] == pytest.approx(1 / 0.75)
    assert report.mean_partial[0] == pytest.approx(1.5, abs=0.02)
    assert report.detected()
    with pytest.raises(ArgumentError):
        bias_existence(env, UtilitySpec('weighted_sum'), DiscountSchedule(0.9, 1))


@pytest.mark.slow
def test_estimator_check_passes_on_synthetic():
    """Large batches put the estimator within 5% of the exact gradient."""
    env = make_synthetic_two_state()
    check = estimator_check(env, PolicyParams(THETA), DiscountSchedule(0.9, 20),
                            UtilitySpec('sum_log'), n1=20_000, n2=20_000, repeats=10)
    assert check.passed

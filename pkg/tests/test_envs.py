"""Tests for the wireless, queuing and small tabular environments."""

import numpy as np
import pytest

from mopg.envs import (
    QueueConfig,
    TabularModel,
    WirelessConfig,
    make_bandit,
    make_cycle,
    make_environment,
    make_queuing,
    make_synthetic_two_state,
    make_wireless,
)
from mopg.errors import ConfigurationError, UnsupportedEnvironmentError


def _step(env, state, action, noise):
    return env.step(np.array([state]), np.array([action]), np.atleast_2d(noise))


# ---------------------------------------------------------------- wireless

def test_wireless_dimensions():
    """Four users give 16 states, 4 actions and 4 objectives."""
    env = make_wireless()
    assert (env.spec.num_states, env.spec.num_actions, env.spec.num_objectives) == (16, 4, 4)
    assert env.spec.reward_max == 2.25


def test_wireless_rewards_follow_rate_table():
    """Good and bad rates go to the selected user only."""
    env = make_wireless()
    no_toggle = np.ones(4)
    _, good = _step(env, 0b1111, 1, no_toggle)
    np.testing.assert_allclose(good[0], [0, 2.25, 0, 0])
    _, bad = _step(env, 0b0000, 2, no_toggle)
    np.testing.assert_allclose(bad[0], [0, 0, 0.384, 0])


def test_wireless_toggles():
    """Users whose uniform falls below toggle_prob flip state."""
    env = make_wireless()
    nxt, _ = _step(env, 0b0000, 0, [0.05, 0.5, 0.01, 0.9])
    assert nxt[0] == 0b0101


def test_wireless_model():
    """Rows sum to one, staying put has probability 0.9^4, transitions ignore the action."""
    model = make_wireless().tabular_model()
    np.testing.assert_allclose(model.transition.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.diagonal(model.transition[:, 0, :]), 0.6561)
    np.testing.assert_array_equal(model.transition[:, 0], model.transition[:, 3])
    assert model.expected_reward[0b1111, 1, 1] == 2.25
    assert np.count_nonzero(model.expected_reward[5, 2]) == 1


def test_wireless_reward_sparsity():
    """At most one objective is rewarded per step."""
    env = make_wireless()
    rng = np.random.default_rng(0)
    states = rng.integers(0, 16, 500)
    actions = rng.integers(0, 4, 500)
    _, rewards = env.step(states, actions, rng.random((500, 4)))
    assert np.all(np.count_nonzero(rewards, axis=1) <= 1)


def test_wireless_model_matches_sampled_transitions():
    """Monte Carlo next-state frequencies agree with the model row."""
    env = make_wireless()
    model = env.tabular_model()
    count = 100_000
    rng = np.random.default_rng(4)
    states = np.full(count, 6)
    nxt, _ = env.step(states, np.zeros(count, dtype=np.int64), rng.random((count, 4)))
    freq = np.bincount(nxt, minlength=16) / count
    expected = model.transition[6, 0]
    sigma = np.sqrt(expected * (1 - expected) / count)
    assert np.all(np.abs(freq - expected) <= 4 * sigma + 1e-12)


def test_wireless_config_validation():
    """Rate tables need one entry per user and toggle_prob lies in [0, 1]."""
    with pytest.raises(ConfigurationError):
        WirelessConfig(toggle_prob=1.5)
    with pytest.raises(ConfigurationError):
        WirelessConfig(num_users=3)
    with pytest.raises(ConfigurationError):
        WirelessConfig(bad_rates=(-1.0, 1.0, 1.0, 1.0))


# ---------------------------------------------------------------- queuing

def test_queue_encoding_round_trip():
    """decode(encode(lengths)) is the identity over every state."""
    env = make_queuing()
    assert env.spec.num_states == 1296
    lengths = env.decode(np.arange(env.spec.num_states))
    np.testing.assert_array_equal(env.encode(lengths), np.arange(env.spec.num_states))
    with pytest.raises(ConfigurationError):
        env.encode(np.array([6, 0, 0, 0]))


def test_empty_queue_serves_nothing():
    """An empty system earns no reward whichever queue is chosen."""
    env = make_queuing()
    for action in range(4):
        _, rewards = _step(env, 0, action, np.zeros(4))
        np.testing.assert_array_equal(rewards[0], np.zeros(4))


def test_service_before_arrivals():
    """Serving queue 0 from (2, 0, 0, 0) pays (1, 0, 0, 0) and leaves length 1."""
    env = make_queuing()
    state = env.encode(np.array([2, 0, 0, 0]))
    # Zero uniforms mean zero arrivals
    nxt, rewards = _step(env, state, 0, np.zeros(4))
    np.testing.assert_array_equal(rewards[0], [1, 0, 0, 0])
    np.testing.assert_array_equal(env.decode(nxt[0]), [1, 0, 0, 0])


def test_arrivals_are_clamped():
    """Lengths never exceed the cap."""
    env = make_queuing()
    full = env.encode(np.array([5, 5, 5, 5]))
    nxt, _ = _step(env, full, 0, np.full(4, 0.999999))
    assert env.decode(nxt[0]).max() == 5


def test_long_run_arrival_count():
    """Arrivals into the fourth queue over 10000 steps average 0.32 per step."""
    env = make_queuing()
    rng = np.random.default_rng(12)
    arrivals = env.sample_arrivals(rng.random((10_000, 4)))[:, 3]
    total = arrivals.sum()
    assert abs(total - 3200) <= 3 * np.sqrt(3200)


def test_queue_has_no_default_model():
    """Default-size queuing reports no tabular model."""
    env = make_queuing()
    assert env.tabular_model() is None
    with pytest.raises(UnsupportedEnvironmentError, match='no tabular model'):
        env.require_model()


def test_small_queue_exact_model():
    """The optional exact model is a valid kernel and matches the sampler."""
    env = make_queuing(QueueConfig(num_queues=2, arrival_rates=(0.3, 0.6), queue_cap=2,
                                   exact_model=True))
    model = env.require_model()
    np.testing.assert_allclose(model.transition.sum(axis=2), 1.0, atol=1e-12)
    count = 100_000
    rng = np.random.default_rng(8)
    start = env.encode(np.array([1, 2]))
    nxt, _ = env.step(np.full(count, start), np.ones(count, dtype=np.int64), rng.random((count, 2)))
    freq = np.bincount(nxt, minlength=env.spec.num_states) / count
    expected = model.transition[start, 1]
    sigma = np.sqrt(expected * (1 - expected) / count)
    assert np.all(np.abs(freq - expected) <= 4 * sigma + 1e-12)
    assert model.expected_reward[start, 1, 1] == 1.0


def test_queue_config_validation():
    """Arrival rates must be positive and match the queue count."""
    with pytest.raises(ConfigurationError):
        QueueConfig(arrival_rates=(0.1, 0.2))
    with pytest.raises(ConfigurationError):
        QueueConfig(arrival_rates=(0.0, 0.1, 0.2, 0.3))
    with pytest.raises(ConfigurationError):
        QueueConfig(queue_cap=0)


@pytest.mark.parametrize('params', [
    {'num_users': 2.5},
    {'num_users': True},
    {'horizon': 10.0},
    {'toggle_prob': '0.1'},
    {'good_rates': ('fast', 1.0, 1.0, 1.0)},
])
def test_wireless_config_rejects_wrong_types(params):
    """Counts must be integers and rates numbers."""
    with pytest.raises(ConfigurationError):
        WirelessConfig(**params)


@pytest.mark.parametrize('params', [
    {'queue_cap': 2.5},
    {'num_queues': 4.0},
    {'queue_cap': False},
    {'exact_model': 1},
    {'arrival_rates': (0.1, None, 0.2, 0.3)},
])
def test_queue_config_rejects_wrong_types(params):
    """Counts must be integers and exact_model a real bool."""
    with pytest.raises(ConfigurationError):
        QueueConfig(**params)


# ---------------------------------------------------------------- tabular

def test_synthetic_model_rows_sum_to_one():
    """The synthetic MDP is a valid two-state, two-action, two-objective model."""
    env = make_synthetic_two_state()
    model = env.tabular_model()
    np.testing.assert_allclose(model.transition.sum(axis=2), 1.0, atol=1e-12)
    assert model.initial.sum() == pytest.approx(1.0)
    assert (env.spec.num_states, env.spec.num_actions, env.spec.num_objectives) == (2, 2, 2)


def test_tabular_model_validation():
    """Rows that do not sum to one are rejected."""
    with pytest.raises(ConfigurationError):
        TabularModel(np.full((1, 1, 1), 0.5), np.zeros((1, 1, 1)), [1.0])
    with pytest.raises(ConfigurationError):
        TabularModel(np.ones((1, 1, 1)), np.zeros((1, 1, 1)), [0.5])
    with pytest.raises(ConfigurationError):
        TabularModel(np.ones((1, 1, 1)), -np.ones((1, 1, 1)), [1.0])


def test_cycle_moves_deterministically():
    """The cycle advances one state per step."""
    env = make_cycle(3)
    nxt, rewards = env.step(np.array([0, 1, 2]), np.array([0, 1, 0]), np.full((3, 1), 0.5))
    np.testing.assert_array_equal(nxt, [1, 2, 0])
    np.testing.assert_array_equal(rewards[:, 0], [1.0, 1.0, 1.0])


def test_bandit_rewards():
    """Bernoulli rewards take the low or high value; the model holds their mean."""
    env = make_bandit((0.5,), low=0.5, high=1.0)
    model = env.tabular_model()
    assert model.expected_reward[0, 0, 0] == pytest.approx(0.75)
    _, rewards = env.step(np.zeros(2, dtype=np.int64), np.zeros(2, dtype=np.int64),
                          np.array([[0.0, 0.2], [0.0, 0.8]]))
    np.testing.assert_array_equal(rewards[:, 0], [1.0, 0.5])


def test_make_environment_registry():
    """Known kinds build; unknown kinds and parameters are configuration errors."""
    assert make_environment('synthetic').name == 'synthetic'
    assert make_environment('wireless', toggle_prob=0.2).config.toggle_prob == 0.2
    with pytest.raises(ConfigurationError):
        make_environment('lunar')
    with pytest.raises(ConfigurationError):
        make_environment('wireless', colour='blue')

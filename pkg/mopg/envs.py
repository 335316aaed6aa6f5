"""
Environments: the wireless scheduler, the multi-queue server and small tabular
test MDPs. Every environment samples transitions from pre-drawn uniforms, so a
rollout is fully determined by its noise block.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import poisson

from .errors import ConfigurationError, UnsupportedEnvironmentError
from .logger import logger
from .mdp import MdpSpec, categorical_inverse

PROB_TOL = 1e-12


def _check_count(name: str, value, minimum: int = 1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigurationError(f'{name} must be an integer >= {minimum}, got {value!r}')


def _real_tuple(name: str, values) -> Tuple[float, ...]:
    try:
        if any(isinstance(v, bool) for v in values):
            raise TypeError(name)
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigurationError(f'{name} must be a list of numbers, got {values!r}') from None


@dataclass(frozen=True)
class TabularModel:
    """Explicit transition[s, a, s'], expected_reward[s, a, m] and initial[s]."""

    transition: np.ndarray
    expected_reward: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        for name in ('transition', 'expected_reward', 'initial'):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p, r, rho = self.transition, self.expected_reward, self.initial
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ConfigurationError(f'transition must be (S, A, S), got {p.shape}')
        if r.ndim != 3 or r.shape[:2] != p.shape[:2]:
            raise ConfigurationError(f'expected_reward must be (S, A, M), got {r.shape}')
        if rho.shape != (p.shape[0],):
            raise ConfigurationError(f'initial must be (S,), got {rho.shape}')
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > PROB_TOL:
            raise ConfigurationError('transition rows must be non-negative and sum to 1')
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError('initial distribution must be non-negative and sum to 1')
        if np.any(r < 0):
            raise ConfigurationError('expected rewards must be non-negative')

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_objectives(self) -> int:
        return self.expected_reward.shape[2]


class Environment(ABC):
    """Sampling interface shared by every environment.

    ``noise_dim`` uniforms per trajectory feed each transition; rewards are
    emitted for (state, action) before the state moves on.
    """

    name: str = 'environment'
    spec: MdpSpec
    noise_dim: int = 1

    @abstractmethod
    def initial_states(self, u: np.ndarray) -> np.ndarray:
        """Draw s_0 for each uniform in ``u``."""

    @abstractmethod
    def step(self, states: np.ndarray, actions: np.ndarray,
             noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (next_states, rewards) with rewards of shape (N, M)."""

    def tabular_model(self) -> Optional[TabularModel]:
        return None

    def require_model(self) -> TabularModel:
        model = self.tabular_model()
        if model is None:
            raise UnsupportedEnvironmentError(f"environment '{self.name}' has no tabular model")
        return model

    def __repr__(self):
        s = self.spec
        return (f'{type(self).__name__}(name={self.name!r}, S={s.num_states}, '
                f'A={s.num_actions}, M={s.num_objectives})')


class TabularEnvironment(Environment):
    """Samples directly from a TabularModel; rewards are the expected rewards."""

    def __init__(self, name: str, model: TabularModel, reward_max: Optional[float] = None):
        self.name = name
        self.model = model
        bound = float(model.expected_reward.max()) if reward_max is None else float(reward_max)
        if model.expected_reward.max() > bound + PROB_TOL:
            raise ConfigurationError(f'expected rewards exceed reward_max={bound}')
        self.spec = MdpSpec(model.num_states, model.num_actions, model.num_objectives, bound)
        self.noise_dim = 1
        self._cum_transition = np.cumsum(model.transition, axis=2)
        self._cum_initial = np.cumsum(model.initial)

    def initial_states(self, u):
        u = np.asarray(u, dtype=float)
        rows = np.broadcast_to(self._cum_initial, (u.shape[0], self.spec.num_states))
        return categorical_inverse(rows, u)

    def step(self, states, actions, noise):
        next_states = categorical_inverse(self._cum_transition[states, actions], noise[:, 0])
        return next_states, self.model.expected_reward[states, actions].copy()

    def tabular_model(self):
        return self.model


class BernoulliRewardEnvironment(TabularEnvironment):
    """Tabular dynamics with rewards ``high`` w.p. success[s, a, m], else ``low``."""

    def __init__(self, name: str, transition, initial, success, low: float, high: float):
        success = np.asarray(success, dtype=float)
        if np.any(success < 0) or np.any(success > 1):
            raise ConfigurationError('success probabilities must lie in [0, 1]')
        if not 0 <= low <= high:
            raise ConfigurationError(f'need 0 <= low <= high, got low={low} high={high}')
        model = TabularModel(transition, low + (high - low) * success, initial)
        super().__init__(name, model, reward_max=high)
        self.noise_dim = 1 + model.num_objectives
        self.success = success
        self.low = float(low)
        self.high = float(high)

    def step(self, states, actions, noise):
        next_states = categorical_inverse(self._cum_transition[states, actions], noise[:, 0])
        hit = noise[:, 1:] < self.success[states, actions]
        return next_states, np.where(hit, self.high, self.low)


# ---------------------------------------------------------------- wireless

@dataclass(frozen=True)
class WirelessConfig:
    num_users: int = 4
    good_rates: Tuple[float, ...] = (1.5, 2.25, 1.25, 1.5)
    bad_rates: Tuple[float, ...] = (0.768, 1.0, 0.384, 1.12)
    toggle_prob: float = 0.1
    # Default trainer horizon; experiment files keep it equal to trainer.horizon
    horizon: int = 500

    def __post_init__(self):
        _check_count('num_users', self.num_users)
        _check_count('horizon', self.horizon)
        object.__setattr__(self, 'good_rates', _real_tuple('good_rates', self.good_rates))
        object.__setattr__(self, 'bad_rates', _real_tuple('bad_rates', self.bad_rates))
        if len(self.good_rates) != self.num_users or len(self.bad_rates) != self.num_users:
            raise ConfigurationError('rate tables need one good and one bad rate per user')
        if min(self.good_rates + self.bad_rates) < 0:
            raise ConfigurationError('rates must be non-negative')
        if isinstance(self.toggle_prob, bool) or not isinstance(self.toggle_prob, (int, float)):
            raise ConfigurationError(f'toggle_prob must be a number, got {self.toggle_prob!r}')
        if not 0.0 <= self.toggle_prob <= 1.0:
            raise ConfigurationError(f'toggle_prob must lie in [0, 1], got {self.toggle_prob}')


class WirelessEnvironment(Environment):
    """Scheduler picking one user per step; bit k of the state is 1 when user k is good."""

    name = 'wireless'

    def __init__(self, config: WirelessConfig):
        self.config = config
        n = config.num_users
        self.spec = MdpSpec(2 ** n, n, n, max(config.good_rates + config.bad_rates))
        self.noise_dim = n
        self._bits = 1 << np.arange(n, dtype=np.int64)
        self._good = np.array(config.good_rates)
        self._bad = np.array(config.bad_rates)

    def user_bits(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states)[..., None] & self._bits) > 0

    def rates(self, states, actions) -> np.ndarray:
        good = self.user_bits(states)[np.arange(len(actions)), actions]
        return np.where(good, self._good[actions], self._bad[actions])

    def initial_states(self, u):
        # Independent fair coin per user is the same as uniform over all 2^n states
        n_states = self.spec.num_states
        return np.minimum((np.asarray(u) * n_states).astype(np.int64), n_states - 1)

    def step(self, states, actions, noise):
        count = len(states)
        rewards = np.zeros((count, self.spec.num_objectives))
        rewards[np.arange(count), actions] = self.rates(states, actions)
        flips = (noise[:, :self.config.num_users] < self.config.toggle_prob) @ self._bits
        return np.bitwise_xor(states, flips), rewards

    def tabular_model(self):
        n, p = self.config.num_users, self.config.toggle_prob
        s_ids = np.arange(self.spec.num_states)
        changed = np.bitwise_xor(s_ids[:, None], s_ids[None, :])
        flips = np.array([[bin(int(c)).count('1') for c in row] for row in changed])
        step = (p ** flips) * ((1.0 - p) ** (n - flips))
        transition = np.repeat(step[:, None, :], n, axis=1)
        reward = np.zeros((self.spec.num_states, n, n))
        for a in range(n):
            reward[:, a, a] = self.rates(s_ids, np.full(len(s_ids), a))
        initial = np.full(self.spec.num_states, 1.0 / self.spec.num_states)
        return TabularModel(transition, reward, initial)


def make_wireless(config: Optional[WirelessConfig] = None) -> WirelessEnvironment:
    env = WirelessEnvironment(config or WirelessConfig())
    logger.debug('Built %r', env)
    return env


# ---------------------------------------------------------------- queuing

@dataclass(frozen=True)
class QueueConfig:
    num_queues: int = 4
    arrival_rates: Tuple[float, ...] = (0.08, 0.16, 0.24, 0.32)
    queue_cap: int = 5
    exact_model: bool = False

    def __post_init__(self):
        _check_count('num_queues', self.num_queues)
        _check_count('queue_cap', self.queue_cap)
        object.__setattr__(self, 'arrival_rates', _real_tuple('arrival_rates', self.arrival_rates))
        if len(self.arrival_rates) != self.num_queues:
            raise ConfigurationError('need one arrival rate per queue')
        if min(self.arrival_rates) <= 0:
            raise ConfigurationError('arrival rates must be positive')
        if not isinstance(self.exact_model, bool):
            raise ConfigurationError(f'exact_model must be true or false, got {self.exact_model!r}')


class QueueEnvironment(Environment):
    """Server choosing one queue per step; service happens before the step's arrivals."""

    name = 'queuing'

    def __init__(self, config: QueueConfig):
        self.config = config
        k, cap = config.num_queues, config.queue_cap
        self.spec = MdpSpec((cap + 1) ** k, k, k, 1.0)
        self.noise_dim = k
        self._radix = (cap + 1) ** np.arange(k, dtype=np.int64)
        # Arrivals beyond the cap are indistinguishable after clamping
        self._arrival_cdf = np.stack(
            [poisson.cdf(np.arange(cap), rate) for rate in config.arrival_rates]
        )

    def encode(self, lengths: np.ndarray) -> np.ndarray:
        lengths = np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 0) or np.any(lengths > self.config.queue_cap):
            raise ConfigurationError(f'queue lengths must lie in [0, {self.config.queue_cap}]')
        return lengths @ self._radix

    def decode(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        return (states[..., None] // self._radix) % (self.config.queue_cap + 1)

    def sample_arrivals(self, u: np.ndarray) -> np.ndarray:
        """Per-queue Poisson arrival counts by CDF inversion, capped at queue_cap."""
        u = np.asarray(u, dtype=float)
        return np.sum(u[..., None] >= self._arrival_cdf, axis=-1)

    def initial_states(self, u):
        return np.zeros(len(u), dtype=np.int64)

    def step(self, states, actions, noise):
        count = len(states)
        rows = np.arange(count)
        lengths = self.decode(states)
        served = lengths[rows, actions] > 0
        rewards = np.zeros((count, self.spec.num_objectives))
        rewards[rows, actions] = served
        lengths[rows, actions] -= served
        lengths = np.minimum(lengths + self.sample_arrivals(noise), self.config.queue_cap)
        return lengths @ self._radix, rewards

    def _length_distribution(self, start: int, rate: float) -> np.ndarray:
        cap = self.config.queue_cap
        dist = np.zeros(cap + 1)
        for v in range(start, cap):
            dist[v] = poisson.pmf(v - start, rate)
        dist[cap] = 1.0 - dist[start:cap].sum()
        return dist

    def tabular_model(self):
        if not self.config.exact_model:
            return None
        k = self.config.num_queues
        n_states = self.spec.num_states
        transition = np.zeros((n_states, k, n_states))
        reward = np.zeros((n_states, k, k))
        for s in range(n_states):
            lengths = self.decode(s)
            for a in range(k):
                after = lengths.copy()
                if after[a] > 0:
                    after[a] -= 1
                    reward[s, a, a] = 1.0
                joint = np.ones(1)
                for q in reversed(range(k)):
                    joint = np.kron(joint, self._length_distribution(after[q], self.config.arrival_rates[q]))
                transition[s, a] = joint
        initial = np.zeros(n_states)
        initial[0] = 1.0
        return TabularModel(transition, reward, initial)


def make_queuing(config: Optional[QueueConfig] = None) -> QueueEnvironment:
    env = QueueEnvironment(config or QueueConfig())
    logger.debug('Built %r', env)
    return env


# ---------------------------------------------------------------- small test MDPs

def make_synthetic_two_state() -> TabularEnvironment:
    """Two states, two actions, two objectives; every probability a simple rational."""
    transition = np.array([
        [[1 / 2, 1 / 2], [1 / 4, 3 / 4]],
        [[3 / 4, 1 / 4], [1 / 3, 2 / 3]],
    ])
    reward = np.array([
        [[1.0, 0.5], [0.0, 0.25]],
        [[0.5, 0.0], [0.25, 1.0]],
    ])
    initial = np.array([0.5, 0.5])
    return TabularEnvironment('synthetic', TabularModel(transition, reward, initial), reward_max=1.0)


def make_cycle(num_states: int, num_actions: int = 2, reward: float = 1.0,
               start: int = 0) -> TabularEnvironment:
    """Deterministic cycle s -> s+1 (mod n) under every action, constant reward, point start."""
    if num_states < 1 or num_actions < 1:
        raise ConfigurationError('cycle needs at least one state and one action')
    transition = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        transition[s, :, (s + 1) % num_states] = 1.0
    rewards = np.full((num_states, num_actions, 1), float(reward))
    initial = np.zeros(num_states)
    initial[start] = 1.0
    return TabularEnvironment('cycle', TabularModel(transition, rewards, initial),
                              reward_max=float(reward))


def make_bandit(success_probs: Sequence[float] = (0.5,), low: float = 0.5,
                high: float = 1.0) -> BernoulliRewardEnvironment:
    """Single-state bandit; arm a pays ``high`` w.p. success_probs[a], else ``low``."""
    arms = len(success_probs)
    transition = np.ones((1, arms, 1))
    success = np.asarray(success_probs, dtype=float).reshape(1, arms, 1)
    return BernoulliRewardEnvironment('bandit', transition, np.ones(1), success, low, high)


ENVIRONMENTS: Dict[str, Callable[..., Environment]] = {
    'wireless': lambda **params: make_wireless(WirelessConfig(**params)),
    'queuing': lambda **params: make_queuing(QueueConfig(**params)),
    'synthetic': lambda **params: make_synthetic_two_state(**params),
}


def make_environment(kind: str, **params) -> Environment:
    try:
        factory = ENVIRONMENTS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown environment '{kind}' (choose from {', '.join(sorted(ENVIRONMENTS))})"
        ) from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for environment '{kind}': {exc}") from exc

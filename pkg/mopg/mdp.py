"""
Vector-reward MDP core: problem dimensions, discounting, trajectory storage,
seeded rollouts and discounted-return computations.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, ConfigurationError

if TYPE_CHECKING:  # pragma: no cover
    from .envs import Environment
    from .policy import PolicyParams


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def categorical_inverse(cumulative: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw for each row of ``cumulative`` with the matching uniform in ``u``."""
    cumulative = np.atleast_2d(cumulative)
    idx = np.sum(np.asarray(u, dtype=float).reshape(-1, 1) >= cumulative, axis=1)
    return np.minimum(idx, cumulative.shape[1] - 1)


@dataclass(frozen=True)
class MdpSpec:
    num_states: int
    num_actions: int
    num_objectives: int
    reward_max: float

    def __post_init__(self):
        for name in ('num_states', 'num_actions', 'num_objectives'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f'{name} must be >= 1, got {getattr(self, name)}')
        if not self.reward_max >= 0:
            raise ConfigurationError(f'reward_max must be >= 0, got {self.reward_max}')


@dataclass(frozen=True)
class DiscountSchedule:
    gamma: float
    horizon: int

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f'gamma must lie in (0, 1], got {self.gamma}')
        if int(self.horizon) < 1:
            raise ConfigurationError(f'horizon must be >= 1, got {self.horizon}')

    @property
    def discounts(self) -> np.ndarray:
        """gamma**t for t = 0..H-1."""
        return np.power(float(self.gamma), np.arange(self.horizon, dtype=float))

    def return_bound(self, reward_max: float) -> float:
        """Largest possible discounted episode return."""
        if self.gamma == 1.0:
            return reward_max * self.horizon
        return reward_max * (1.0 - self.gamma ** self.horizon) / (1.0 - self.gamma)

    def with_horizon(self, horizon: int) -> 'DiscountSchedule':
        return DiscountSchedule(self.gamma, horizon)


@dataclass(frozen=True)
class Trajectory:
    """One rollout: states[t], actions[t] and the reward vector rewards[t]."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'states', _frozen(self.states, np.int64))
        object.__setattr__(self, 'actions', _frozen(self.actions, np.int64))
        h = len(self.states)
        rewards = np.asarray(self.rewards, dtype=float)
        if rewards.ndim == 1:
            if h == 0 or rewards.size % h:
                raise ConfigurationError('rewards must hold one vector per step')
            rewards = rewards.reshape(h, -1)
        object.__setattr__(self, 'rewards', _frozen(rewards, float))
        if len(self.actions) != h or self.rewards.shape[0] != h:
            raise ConfigurationError('states, actions and rewards must have equal length')

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def num_objectives(self) -> int:
        return self.rewards.shape[1]

    def steps(self) -> Iterator[Tuple[int, int, np.ndarray]]:
        for t in range(self.horizon):
            yield int(self.states[t]), int(self.actions[t]), self.rewards[t]


@dataclass(frozen=True)
class TrajectoryBatch:
    """N trajectories of equal horizon stacked into (N, H) and (N, H, M) arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'states', _frozen(self.states, np.int64))
        object.__setattr__(self, 'actions', _frozen(self.actions, np.int64))
        object.__setattr__(self, 'rewards', _frozen(self.rewards, float))
        if self.states.ndim != 2 or self.rewards.ndim != 3:
            raise ConfigurationError('batch arrays must be (N, H) and (N, H, M)')
        if self.states.shape != self.actions.shape or self.states.shape != self.rewards.shape[:2]:
            raise ConfigurationError('batch arrays disagree on (N, H)')

    @classmethod
    def stack(cls, trajs: Sequence[Trajectory]) -> 'TrajectoryBatch':
        if len(trajs) == 0:
            raise ArgumentError('cannot stack an empty list of trajectories')
        horizons = {t.horizon for t in trajs}
        if len(horizons) != 1:
            raise ArgumentError(f'trajectories have unequal horizons {sorted(horizons)}')
        return cls(
            np.stack([t.states for t in trajs]),
            np.stack([t.actions for t in trajs]),
            np.stack([t.rewards for t in trajs]),
        )

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, index: int) -> Trajectory:
        return Trajectory(self.states[index], self.actions[index], self.rewards[index])

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    @property
    def num_objectives(self) -> int:
        return self.rewards.shape[2]

    def prefix(self, horizon: int) -> 'TrajectoryBatch':
        """The first ``horizon`` steps of every trajectory."""
        if not 1 <= horizon <= self.horizon:
            raise ArgumentError(f'prefix horizon {horizon} outside [1, {self.horizon}]')
        return TrajectoryBatch(
            self.states[:, :horizon], self.actions[:, :horizon], self.rewards[:, :horizon]
        )


TrajectoryLike = Union[Trajectory, TrajectoryBatch, Sequence[Trajectory]]


def as_batch(trajs: TrajectoryLike) -> TrajectoryBatch:
    if isinstance(trajs, TrajectoryBatch):
        if len(trajs) == 0:
            raise ArgumentError('empty trajectory batch')
        return trajs
    if isinstance(trajs, Trajectory):
        return TrajectoryBatch.stack([trajs])
    return TrajectoryBatch.stack(list(trajs))


# ---------------------------------------------------------------- sampling

def check_dimensions(env: 'Environment', policy: 'PolicyParams'):
    if policy.theta.shape != (env.spec.num_states, env.spec.num_actions):
        raise ConfigurationError(
            f'policy shape {policy.theta.shape} does not match environment '
            f'{env.name} (|S|={env.spec.num_states}, |A|={env.spec.num_actions})'
        )


def draw_noise(stream: np.random.Generator, env: 'Environment', horizon: int,
               count: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Uniforms for ``count`` trajectories: one initial draw each, then per step
    one action draw followed by ``env.noise_dim`` environment draws."""
    init = stream.random(count)
    steps = stream.random((count, horizon, 1 + env.noise_dim))
    return init, steps


def rollout(env: 'Environment', policy: 'PolicyParams', schedule: DiscountSchedule,
            init_noise: np.ndarray, step_noise: np.ndarray) -> TrajectoryBatch:
    """Run a batch of rollouts driven entirely by pre-drawn uniforms."""
    check_dimensions(env, policy)
    count, horizon = step_noise.shape[0], schedule.horizon
    if step_noise.shape[1] < horizon or step_noise.shape[2] != 1 + env.noise_dim:
        raise ConfigurationError(f'noise block {step_noise.shape} does not fit horizon {horizon}')
    cumulative = np.cumsum(policy.probabilities(), axis=1)
    states = np.empty((count, horizon), dtype=np.int64)
    actions = np.empty((count, horizon), dtype=np.int64)
    rewards = np.empty((count, horizon, env.spec.num_objectives), dtype=float)
    current = env.initial_states(init_noise)
    for t in range(horizon):
        chosen = categorical_inverse(cumulative[current], step_noise[:, t, 0])
        states[:, t] = current
        actions[:, t] = chosen
        current, rewards[:, t, :] = env.step(current, chosen, step_noise[:, t, 1:])
    return TrajectoryBatch(states, actions, rewards)


def sample_batch(env: 'Environment', policy: 'PolicyParams', schedule: DiscountSchedule,
                 streams: Sequence[np.random.Generator]) -> TrajectoryBatch:
    """One trajectory per stream; trajectory i depends only on streams[i]."""
    if len(streams) == 0:
        raise ArgumentError('at least one stream is required')
    blocks = [draw_noise(stream, env, schedule.horizon) for stream in streams]
    init = np.concatenate([b[0] for b in blocks])
    steps = np.concatenate([b[1] for b in blocks])
    return rollout(env, policy, schedule, init, steps)


def sample_trajectory(env: 'Environment', policy: 'PolicyParams', schedule: DiscountSchedule,
                      stream: np.random.Generator) -> Trajectory:
    return sample_batch(env, policy, schedule, [stream])[0]


# ---------------------------------------------------------------- returns

def discounted_tails(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """tails[..., t, m] = sum_{h >= t} gamma**h * rewards[..., h, m] (absolute discounting)."""
    horizon = rewards.shape[-2]
    weights = np.power(float(gamma), np.arange(horizon, dtype=float))[:, None]
    discounted = rewards * weights
    return np.flip(np.cumsum(np.flip(discounted, axis=-2), axis=-2), axis=-2)


def tail_return(traj: Trajectory, schedule: DiscountSchedule, t: int, m: int) -> float:
    if traj.horizon != schedule.horizon:
        raise ArgumentError(f'trajectory horizon {traj.horizon} != schedule horizon {schedule.horizon}')
    if not 0 <= t < traj.horizon:
        raise ArgumentError(f'step index {t} outside [0, {traj.horizon})')
    if not 0 <= m < traj.num_objectives:
        raise ArgumentError(f'objective index {m} outside [0, {traj.num_objectives})')
    return float(np.sum(schedule.discounts[t:] * traj.rewards[t:, m]))


def episode_return(traj: Trajectory, schedule: DiscountSchedule) -> np.ndarray:
    if traj.horizon != schedule.horizon:
        raise ArgumentError(f'trajectory horizon {traj.horizon} != schedule horizon {schedule.horizon}')
    return schedule.discounts @ traj.rewards


def batch_returns(batch: TrajectoryBatch, schedule: DiscountSchedule) -> np.ndarray:
    """(N, M) discounted episode returns."""
    if batch.horizon != schedule.horizon:
        raise ArgumentError(f'batch horizon {batch.horizon} != schedule horizon {schedule.horizon}')
    return np.einsum('t,ntm->nm', schedule.discounts, batch.rewards)


def dump_trajectories(trajs: TrajectoryLike, path: Union[str, Path]) -> Path:
    """Debug dump: one row per step, ``trajectory,t,state,action,r_0..r_{M-1}``."""
    batch = as_batch(trajs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ['trajectory', 't', 'state', 'action'] + [f'r_{m}' for m in range(batch.num_objectives)]
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i, traj in enumerate(batch):
            for t, (s, a, r) in enumerate(traj.steps()):
                writer.writerow([i, t, s, a] + [repr(float(x)) for x in r])
    return path


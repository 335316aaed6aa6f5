"""
Return estimates and the truncated policy-gradient estimator.

For a trajectory tau_i of length H and frozen partials p = df/dJ evaluated at
the batch estimate J_hat (from an independent batch tau_j):

    g(tau_i) = sum_t score(s_t, a_t) * sum_m p_m * sum_{h=t}^{H-1} gamma^h r_m(s_h, a_h)

``reward_to_go`` uses the tail sums above; ``full_return`` weights every step
with the whole-episode return instead, which has the same expectation.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigurationError
from .logger import logger
from .mdp import (
    DiscountSchedule,
    Trajectory,
    TrajectoryLike,
    as_batch,
    batch_returns,
    discounted_tails,
)
from .policy import PolicyParams
from .utility import UtilitySpec, is_clamped
from .utility import partials as utility_partials

VARIANTS = ('reward_to_go', 'full_return')


@dataclass(frozen=True)
class ReturnEstimate:
    j_hat: np.ndarray
    n2: int
    horizon: int
    gamma: float


@dataclass(frozen=True)
class GradientEstimate:
    omega: np.ndarray
    n1: int
    variant: str
    clamped: bool = False
    partials: Optional[np.ndarray] = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.omega))


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown estimator variant '{variant}' (choose from {', '.join(VARIANTS)})")


def estimate_returns(trajs: TrajectoryLike, schedule: DiscountSchedule) -> ReturnEstimate:
    batch = as_batch(trajs)
    returns = batch_returns(batch, schedule)
    return ReturnEstimate(returns.mean(axis=0), len(batch), schedule.horizon, schedule.gamma)


def _step_weights(rewards: np.ndarray, gamma: float, variant: str) -> np.ndarray:
    """(N, H, M) per-step, per-objective multipliers of the score."""
    tails = discounted_tails(rewards, gamma)
    if variant == 'full_return':
        return np.broadcast_to(tails[:, :1, :], tails.shape)
    return tails


def _accumulate(states: np.ndarray, actions: np.ndarray, weights: np.ndarray,
                probs: np.ndarray) -> np.ndarray:
    """sum_t weights[n, t, k] * score(s_t, a_t) for every (n, k); returns (N, K, S, A)."""
    count, horizon, width = weights.shape
    num_states, num_actions = probs.shape
    n_idx = np.repeat(np.arange(count), horizon)
    s_idx, a_idx = states.reshape(-1), actions.reshape(-1)
    flat_w = weights.reshape(count * horizon, width)
    hits = np.zeros((count, num_states, num_actions, width))
    np.add.at(hits, (n_idx, s_idx, a_idx), flat_w)
    row_mass = hits.sum(axis=2)
    out = hits - row_mass[:, :, None, :] * probs[None, :, :, None]
    return np.moveaxis(out, 3, 1)


def _check_batch(batch, policy: PolicyParams, schedule: DiscountSchedule):
    if batch.horizon != schedule.horizon:
        raise ConfigurationError(
            f'trajectory horizon {batch.horizon} does not match schedule horizon {schedule.horizon}'
        )
    if batch.states.max() >= policy.num_states or batch.actions.max() >= policy.num_actions:
        raise ConfigurationError(
            f'trajectories visit states/actions outside the {policy.theta.shape} policy table'
        )


def per_objective_gradients(trajs: TrajectoryLike, policy: PolicyParams,
                            schedule: DiscountSchedule, variant: str = 'reward_to_go') -> np.ndarray:
    """(N, M, d): for each trajectory and objective m, sum_t score_t * tail_m(t)."""
    _check_variant(variant)
    batch = as_batch(trajs)
    _check_batch(batch, policy, schedule)
    weights = _step_weights(batch.rewards, schedule.gamma, variant)
    grads = _accumulate(batch.states, batch.actions, weights, policy.probabilities())
    return grads.reshape(len(batch), batch.num_objectives, policy.dim)


def per_trajectory_gradients(trajs: TrajectoryLike, partials_at_jhat, policy: PolicyParams,
                             schedule: DiscountSchedule, variant: str = 'reward_to_go') -> np.ndarray:
    """(N, d) matrix whose rows are single_gradient for each trajectory."""
    _check_variant(variant)
    batch = as_batch(trajs)
    _check_batch(batch, policy, schedule)
    p = np.asarray(partials_at_jhat, dtype=float)
    if p.shape != (batch.num_objectives,):
        raise ConfigurationError(f'expected {batch.num_objectives} partials, got shape {p.shape}')
    weights = _step_weights(batch.rewards, schedule.gamma, variant) @ p
    grads = _accumulate(batch.states, batch.actions, weights[:, :, None], policy.probabilities())
    return grads.reshape(len(batch), policy.dim)


def single_gradient(traj: Trajectory, partials_at_jhat, policy: PolicyParams,
                    schedule: DiscountSchedule, variant: str = 'reward_to_go') -> np.ndarray:
    return per_trajectory_gradients(traj, partials_at_jhat, policy, schedule, variant)[0]


def gradient_with_partials(trajs_i: TrajectoryLike, partials_at_j, policy: PolicyParams,
                           schedule: DiscountSchedule, variant: str = 'reward_to_go') -> GradientEstimate:
    """Mean estimator for externally supplied partials (e.g. exact ones)."""
    rows = per_trajectory_gradients(trajs_i, partials_at_j, policy, schedule, variant)
    return GradientEstimate(rows.mean(axis=0), rows.shape[0], variant,
                            partials=np.asarray(partials_at_j, dtype=float))


def batch_gradient(trajs_i: TrajectoryLike, returns: ReturnEstimate, utility: UtilitySpec,
                   policy: PolicyParams, schedule: DiscountSchedule,
                   variant: str = 'reward_to_go') -> GradientEstimate:
    """omega = mean_i g(tau_i) with partials frozen at returns.j_hat."""
    batch = as_batch(trajs_i)
    if returns.horizon != schedule.horizon:
        raise ConfigurationError('return estimate and schedule disagree on the horizon')
    clamped = is_clamped(utility, returns.j_hat)
    if clamped:
        logger.warning('Clamp floor %.3g active at J_hat=%s; partials are capped',
                       utility.clamp_floor, np.array2string(returns.j_hat, precision=4))
    p = utility_partials(utility, returns.j_hat)
    rows = per_trajectory_gradients(batch, p, policy, schedule, variant)
    return GradientEstimate(rows.mean(axis=0), len(batch), variant, clamped=clamped, partials=p)


def gradient_variance(rows: np.ndarray) -> float:
    """Trace of the sample covariance of per-trajectory gradients (ddof=1)."""
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] < 2:
        raise ArgumentError('need at least two samples for a variance')
    centered = rows - rows.mean(axis=0)
    return float(np.sum(centered * centered) / (rows.shape[0] - 1))

"""
Exact oracles over tabular models and Monte Carlo measurements of the
estimator's bias, variance and truncation error.

Every exact quantity here is computed from (transition, expected_reward,
initial) by forward state marginals and backward finite-horizon values, so
it never shares a code path with the sampled estimator.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .envs import Environment, TabularModel
from .errors import ArgumentError, ConfigurationError
from .estimator import (
    batch_gradient,
    estimate_returns,
    gradient_variance,
    per_objective_gradients,
    per_trajectory_gradients,
)
from .logger import logger
from .mdp import DiscountSchedule, Trajectory, batch_returns, draw_noise, rollout, sample_batch
from .policy import SCORE_NORM_BOUND, PolicyParams
from .streams import BATCH_GRADIENT, BATCH_RETURNS, StreamFactory
from .utility import UtilitySpec, lipschitz_bound, partial_bound, partials, value

DEFAULT_TAIL_TOL = 1e-10
FD_STEP = 1e-5
# Trajectory-steps rolled out together when measuring repetition-averaged quantities
CHUNK_STEPS = 1 << 21
MAX_ENUMERATED_PATHS = 1_000_000


@dataclass(frozen=True)
class ExactReturns:
    j_exact: np.ndarray
    horizon_used: int
    infinite: bool = False


def _check_policy(model: TabularModel, policy: PolicyParams):
    if policy.theta.shape != (model.num_states, model.num_actions):
        raise ConfigurationError(
            f'policy shape {policy.theta.shape} does not match model '
            f'({model.num_states}, {model.num_actions})'
        )


def reference_horizon(gamma: float, reward_max: float, tol: float = DEFAULT_TAIL_TOL) -> int:
    """Smallest H with reward_max * gamma^H / (1 - gamma) <= tol."""
    if not 0.0 < gamma < 1.0:
        raise ArgumentError(f'an infinite-horizon proxy needs gamma < 1, got {gamma}')
    if not tol > 0:
        raise ArgumentError(f'tolerance must be > 0, got {tol}')
    if reward_max <= 0:
        return 1
    horizon = math.ceil(math.log(tol * (1.0 - gamma) / reward_max) / math.log(gamma))
    return max(1, horizon)


def _model_reward_max(model: TabularModel) -> float:
    return float(model.expected_reward.max())


# ---------------------------------------------------------------- dynamic programming

def state_marginals(model: TabularModel, policy: PolicyParams, horizon: int) -> np.ndarray:
    """(H, S) array whose row t is the distribution of s_t."""
    _check_policy(model, policy)
    if horizon < 1:
        raise ArgumentError(f'horizon must be >= 1, got {horizon}')
    p_pi = np.einsum('sa,sat->st', policy.probabilities(), model.transition)
    out = np.empty((horizon, model.num_states))
    out[0] = model.initial
    for t in range(1, horizon):
        out[t] = out[t - 1] @ p_pi
    return out


def exact_returns(model: TabularModel, policy: PolicyParams, schedule: DiscountSchedule,
                  infinite: bool = False, tol: float = DEFAULT_TAIL_TOL) -> ExactReturns:
    """J_{m,H} by DP; with ``infinite`` the horizon is stretched to the reference horizon."""
    horizon = schedule.horizon
    if infinite:
        horizon = reference_horizon(schedule.gamma, _model_reward_max(model), tol)
    marginals = state_marginals(model, policy, horizon)
    r_pi = np.einsum('sa,sam->sm', policy.probabilities(), model.expected_reward)
    discounts = np.power(float(schedule.gamma), np.arange(horizon, dtype=float))
    j = discounts @ (marginals @ r_pi)
    return ExactReturns(j, horizon, infinite)


def _action_values(model: TabularModel, probs: np.ndarray, gamma: float,
                   horizon: int) -> np.ndarray:
    """(H, S, A, M) tail values Q_t(s, a) = E[sum_{h>=t} gamma^(h-t) r_h | s_t=s, a_t=a]."""
    q = np.empty((horizon,) + model.expected_reward.shape)
    v_next = np.zeros((model.num_states, model.num_objectives))
    for t in reversed(range(horizon)):
        q[t] = model.expected_reward + gamma * np.einsum('sat,tm->sam', model.transition, v_next)
        v_next = np.einsum('sa,sam->sm', probs, q[t])
    return q


def exact_jacobian(model: TabularModel, policy: PolicyParams,
                   schedule: DiscountSchedule) -> np.ndarray:
    """(M, d) matrix of grad_theta J_{m,H} from marginals and backward Q-values."""
    _check_policy(model, policy)
    horizon, gamma = schedule.horizon, schedule.gamma
    probs = policy.probabilities()
    marginals = state_marginals(model, policy, horizon)
    q = _action_values(model, probs, gamma, horizon)
    v = np.einsum('sa,tsam->tsm', probs, q)
    advantage = q - v[:, :, None, :]
    weights = np.power(float(gamma), np.arange(horizon, dtype=float))[:, None] * marginals
    grad = np.einsum('ts,sa,tsam->msa', weights, probs, advantage)
    return grad.reshape(model.num_objectives, -1)


def exact_gradient(model: TabularModel, policy: PolicyParams, schedule: DiscountSchedule,
                   utility: UtilitySpec, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of theta -> f(J_H(theta)), one probe pair per parameter."""
    _check_policy(model, policy)
    x0 = policy.flatten()
    shape = policy.theta.shape

    def objective(x: np.ndarray) -> float:
        probe = PolicyParams.unflatten(x, *shape)
        return value(utility, exact_returns(model, probe, schedule).j_exact)

    grad = np.empty_like(x0)
    for i, e in enumerate(np.eye(x0.size)):
        grad[i] = (objective(x0 + step * e) - objective(x0 - step * e)) / (2.0 * step)
    return grad


def enumerate_trajectories(model: TabularModel, policy: PolicyParams,
                           horizon: int) -> List[Tuple[float, Trajectory]]:
    """Every positive-probability path of length ``horizon`` with its probability.

    Rewards are the expected rewards, so expectations of reward-linear
    quantities are exact even when the environment samples stochastic rewards.
    """
    _check_policy(model, policy)
    probs = policy.probabilities()
    branching = np.count_nonzero(probs > 0) * model.num_states
    if branching ** horizon > MAX_ENUMERATED_PATHS * model.num_states:
        raise ArgumentError(f'too many paths to enumerate at horizon {horizon}')
    paths: List[Tuple[float, Trajectory]] = []

    def extend(prob: float, states: List[int], actions: List[int], s: int):
        if len(states) == horizon:
            rewards = model.expected_reward[states, actions]
            paths.append((prob, Trajectory(states, actions, rewards)))
            return
        for a in np.flatnonzero(probs[s] > 0):
            p_sa = prob * probs[s, a]
            if len(states) + 1 == horizon:
                extend(p_sa, states + [s], actions + [int(a)], s)
                continue
            for s_next in np.flatnonzero(model.transition[s, a] > 0):
                extend(p_sa * model.transition[s, a, s_next], states + [s], actions + [int(a)],
                       int(s_next))

    for s0 in np.flatnonzero(model.initial > 0):
        extend(float(model.initial[s0]), [], [], int(s0))
    return paths


# ---------------------------------------------------------------- bias decomposition

def _sum_horizon_weights(gamma: float, horizon: int) -> float:
    """sum_{h<H} (h+1) gamma^h, the largest total of tail sums per unit reward."""
    if gamma == 1.0:
        return horizon * (horizon + 1) / 2.0
    g_h = gamma ** horizon
    return (1.0 - g_h - horizon * g_h * (1.0 - gamma)) / (1.0 - gamma) ** 2


@dataclass(frozen=True)
class BiasReport:
    """Bias terms as norms of mean differences plus mean per-sample norms.

    term_* contrast expectations (the estimator bias itself); *_magnitude are
    means of the per-sample norms each bound controls, with standard errors.
    """

    n2: int
    horizon: int
    gamma: float
    reps: int
    reference_horizon: int
    term_I: float
    term_II: float
    term_III: float
    total_bias: float
    term_I_se: float
    magnitude_I: float
    magnitude_II: float
    magnitude_III: float
    magnitude_se: Tuple[float, float, float]
    bound_I: float
    bound_II: float
    bound_III: float
    tail_tol: float = DEFAULT_TAIL_TOL

    @property
    def within_bounds(self) -> Tuple[bool, bool, bool]:
        mags = (self.magnitude_I, self.magnitude_II, self.magnitude_III)
        bounds = (self.bound_I, self.bound_II, self.bound_III)
        return tuple(m <= b + 3.0 * se + self.tail_tol
                     for m, b, se in zip(mags, bounds, self.magnitude_se))

    @property
    def triangle_holds(self) -> bool:
        slack = 3.0 * self.term_I_se + self.tail_tol
        return self.total_bias <= self.term_I + self.term_II + self.term_III + slack

    def as_row(self) -> Dict[str, object]:
        ok = self.within_bounds
        return {
            'N2': self.n2, 'H': self.horizon, 'gamma': self.gamma, 'reps': self.reps,
            'H_ref': self.reference_horizon,
            'term_I': self.term_I, 'term_II': self.term_II, 'term_III': self.term_III,
            'total_bias': self.total_bias, 'term_I_se': self.term_I_se,
            'magnitude_I': self.magnitude_I, 'magnitude_II': self.magnitude_II,
            'magnitude_III': self.magnitude_III,
            'se_I': self.magnitude_se[0], 'se_II': self.magnitude_se[1], 'se_III': self.magnitude_se[2],
            'bound_I': self.bound_I, 'bound_II': self.bound_II, 'bound_III': self.bound_III,
            'ok_I': int(ok[0]), 'ok_II': int(ok[1]), 'ok_III': int(ok[2]),
        }


def _rep_batch(env: Environment, policy: PolicyParams, schedule: DiscountSchedule,
               factory: StreamFactory, reps: Sequence[int], tag: int, per_rep: int):
    """``per_rep`` trajectories for each repetition, drawn from that repetition's stream."""
    blocks = [draw_noise(factory.stream(r, tag), env, schedule.horizon, per_rep) for r in reps]
    init = np.concatenate([b[0] for b in blocks])
    steps = np.concatenate([b[1] for b in blocks])
    return rollout(env, policy, schedule, init, steps)


def _bias_chunk(env, policy, schedule, long_schedule, utility, seed, reps, n2,
                p_h, p_inf) -> Dict[str, np.ndarray]:
    factory = StreamFactory(seed)
    m = env.spec.num_objectives
    returns_batch = _rep_batch(env, policy, schedule, factory, reps, BATCH_RETURNS, n2)
    j_hat = batch_returns(returns_batch, schedule).reshape(len(reps), n2, m).mean(axis=1)
    p_hat = np.stack([partials(utility, j) for j in j_hat])

    long_batch = _rep_batch(env, policy, long_schedule, factory, reps, BATCH_GRADIENT, 1)
    a_ref = per_objective_gradients(long_batch, policy, long_schedule)
    a_h = per_objective_gradients(long_batch.prefix(schedule.horizon), policy, schedule)
    return {
        'j_hat': j_hat,
        'p_hat': p_hat,
        'norm_I': np.linalg.norm(np.einsum('rm,rmd->rd', p_hat - p_h, a_h), axis=1),
        'norm_II': np.linalg.norm(np.einsum('m,rmd->rd', p_h - p_inf, a_h), axis=1),
        'norm_III': np.linalg.norm(np.einsum('m,rmd->rd', p_inf, a_h - a_ref), axis=1),
    }


def _mean_se(x: np.ndarray) -> Tuple[float, float]:
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def measure_bias_terms(env: Environment, policy: PolicyParams, schedule: DiscountSchedule,
                       utility: UtilitySpec, n2: int, reps: int, seed: int = 0,
                       tol: float = DEFAULT_TAIL_TOL, n_jobs: int = 1) -> BiasReport:
    """Split the estimator bias at horizon H into its finite-sample part (I), the
    partials-truncation part (II) and the trajectory-truncation part (III)."""
    model = env.require_model()
    _check_policy(model, policy)
    if n2 < 1 or reps < 1:
        raise ArgumentError('n2 and reps must be >= 1')
    gamma, horizon = schedule.gamma, schedule.horizon
    r_max = env.spec.reward_max
    h_ref = max(reference_horizon(gamma, r_max, tol), horizon)
    long_schedule = schedule.with_horizon(h_ref)
    m = env.spec.num_objectives

    j_h = exact_returns(model, policy, schedule).j_exact
    j_inf = exact_returns(model, policy, long_schedule).j_exact
    p_h, p_inf = partials(utility, j_h), partials(utility, j_inf)
    jac_h = exact_jacobian(model, policy, schedule)
    jac_ref = exact_jacobian(model, policy, long_schedule)

    per_chunk = max(1, CHUNK_STEPS // (n2 * horizon + h_ref))
    chunks = [range(start, min(start + per_chunk, reps)) for start in range(0, reps, per_chunk)]
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_bias_chunk)(env, policy, schedule, long_schedule, utility, seed, chunk, n2, p_h, p_inf)
        for chunk in chunks
    )
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}

    # Exact in the gradient trajectory: E[g - g~] = (E[p_hat] - p_H) @ grad J_H
    centred = (merged['p_hat'] - p_h) @ jac_h
    term_i_vec = centred.mean(axis=0)
    term_i_se = math.sqrt(np.sum(centred.var(axis=0, ddof=1)) / reps) if reps > 1 else 0.0
    term_ii_vec = (p_h - p_inf) @ jac_h
    term_iii_vec = p_inf @ (jac_h - jac_ref)
    total = np.linalg.norm(term_i_vec + term_ii_vec + term_iii_vec)

    mag_i, se_i = _mean_se(merged['norm_I'])
    mag_ii, se_ii = _mean_se(merged['norm_II'])
    mag_iii, se_iii = _mean_se(merged['norm_III'])

    g, s_h = SCORE_NORM_BOUND, _sum_horizon_weights(gamma, horizon)
    j_hat = merged['j_hat']
    deltas = np.minimum(j_hat.min(axis=1), j_h.min())
    sup_gap = np.max(np.abs(j_hat - j_h), axis=1)
    lf_i = np.array([lipschitz_bound(utility, d) for d in deltas])
    bound_i = float(np.mean(m * g * lf_i * r_max * s_h * sup_gap))
    delta_exact = min(j_h.min(), j_inf.min())
    bound_ii = (m ** 1.5 * g * lipschitz_bound(utility, delta_exact) * r_max ** 2 * s_h
                * gamma ** horizon / (1.0 - gamma))
    c_inf = partial_bound(utility, j_inf.min(), m)
    bound_iii = (m * g * c_inf * r_max * gamma ** horizon * (1.0 + horizon * (1.0 - gamma))
                 / (1.0 - gamma) ** 2)

    report = BiasReport(
        n2=n2, horizon=horizon, gamma=gamma, reps=reps, reference_horizon=h_ref,
        term_I=float(np.linalg.norm(term_i_vec)), term_II=float(np.linalg.norm(term_ii_vec)),
        term_III=float(np.linalg.norm(term_iii_vec)), total_bias=float(total),
        term_I_se=term_i_se,
        magnitude_I=mag_i, magnitude_II=mag_ii, magnitude_III=mag_iii,
        magnitude_se=(se_i, se_ii, se_iii),
        bound_I=bound_i, bound_II=float(bound_ii), bound_III=float(bound_iii), tail_tol=tol,
    )
    logger.info('Bias N2=%d H=%d: I=%.3g II=%.3g III=%.3g total=%.3g (bounds ok: %s)',
                n2, horizon, report.term_I, report.term_II, report.term_III,
                report.total_bias, report.within_bounds)
    return report


def log_log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size < 2 or np.any(xs <= 0) or np.any(ys <= 0):
        raise ArgumentError('need at least two positive points for a log-log slope')
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


# ---------------------------------------------------------------- variance and truncation

def estimate_variance(env: Environment, policy: PolicyParams, schedule: DiscountSchedule,
                      utility: UtilitySpec, n2: int, samples: int, seed: int = 0,
                      variant: str = 'reward_to_go', exact_partials: bool = False) -> float:
    """Sample variance (trace of the covariance) of single-trajectory gradients.

    Partials are frozen once: at exact J_H when ``exact_partials`` is set,
    otherwise at J_hat from one batch of ``n2`` trajectories.
    """
    if samples < 2:
        raise ArgumentError(f'need samples >= 2, got {samples}')
    factory = StreamFactory(seed)
    if exact_partials:
        j = exact_returns(env.require_model(), policy, schedule).j_exact
    else:
        returns_batch = sample_batch(env, policy, schedule, factory.streams(0, BATCH_RETURNS, n2))
        j = estimate_returns(returns_batch, schedule).j_hat
    p = partials(utility, j)
    per_chunk = max(1, CHUNK_STEPS // schedule.horizon)
    rows = []
    for start in range(0, samples, per_chunk):
        count = min(per_chunk, samples - start)
        init, steps = draw_noise(factory.stream(0, BATCH_GRADIENT, start), env, schedule.horizon, count)
        batch = rollout(env, policy, schedule, init, steps)
        rows.append(per_trajectory_gradients(batch, p, policy, schedule, variant))
    return gradient_variance(np.concatenate(rows))


@dataclass(frozen=True)
class TruncationGap:
    horizon: int
    gap: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.gap <= self.bound + DEFAULT_TAIL_TOL


def truncation_gap(model: TabularModel, policy: PolicyParams, gamma: float,
                   horizons: Sequence[int], tol: float = DEFAULT_TAIL_TOL) -> List[TruncationGap]:
    """max_m |J_{m,H} - J_m| per H against reward_max * gamma^H / (1 - gamma)."""
    r_max = _model_reward_max(model)
    h_ref = reference_horizon(gamma, r_max, tol)
    j_ref = exact_returns(model, policy, DiscountSchedule(gamma, h_ref)).j_exact
    out = []
    for h in horizons:
        j_h = exact_returns(model, policy, DiscountSchedule(gamma, h)).j_exact
        gap = TruncationGap(int(h), float(np.max(np.abs(j_h - j_ref))),
                            r_max * gamma ** h / (1.0 - gamma))
        if not gap.within_bound:
            logger.warning('Truncation gap %.3g exceeds bound %.3g at H=%d', gap.gap, gap.bound, h)
        out.append(gap)
    return out


# ---------------------------------------------------------------- bias existence and agreement

@dataclass(frozen=True)
class BiasExistence:
    """Mean of partials at J_hat against the partials at E[J_hat]."""

    n2: int
    samples: int
    mean_partial: np.ndarray
    partial_at_mean: np.ndarray
    standard_error: np.ndarray
    convex_partials: bool

    @property
    def z_scores(self) -> np.ndarray:
        gap = self.mean_partial - self.partial_at_mean
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(self.standard_error > 0, gap / self.standard_error, 0.0)

    def detected(self, threshold: float = 5.0) -> bool:
        """Jensen gap in the direction fixed by the partials' convexity."""
        z = self.z_scores if self.convex_partials else -self.z_scores
        return bool(np.all(z >= threshold))


def bias_existence(env: Environment, utility: UtilitySpec, schedule: DiscountSchedule,
                   n2: int = 1, samples: int = 10_000, seed: int = 0,
                   policy: Optional[PolicyParams] = None) -> BiasExistence:
    """Compare E[df/dJ(J_hat)] with df/dJ(E[J_hat]) over independent J_hat draws."""
    if samples < 2:
        raise ArgumentError(f'need samples >= 2, got {samples}')
    if utility.is_linear:
        raise ArgumentError('a linear utility has constant partials; there is no gap to detect')
    model = env.require_model()
    policy = policy or PolicyParams(np.zeros((env.spec.num_states, env.spec.num_actions)))
    j_mean = exact_returns(model, policy, schedule).j_exact
    factory = StreamFactory(seed)
    m = env.spec.num_objectives
    per_chunk = max(1, CHUNK_STEPS // (n2 * schedule.horizon))
    draws = []
    for start in range(0, samples, per_chunk):
        reps = range(start, min(start + per_chunk, samples))
        batch = _rep_batch(env, policy, schedule, factory, reps, BATCH_RETURNS, n2)
        j_hat = batch_returns(batch, schedule).reshape(len(reps), n2, m).mean(axis=1)
        draws.append(np.stack([partials(utility, j) for j in j_hat]))
    values = np.concatenate(draws)
    return BiasExistence(
        n2=n2, samples=samples,
        mean_partial=values.mean(axis=0),
        partial_at_mean=partials(utility, j_mean),
        standard_error=values.std(axis=0, ddof=1) / math.sqrt(samples),
        # c/J^2 and 1/J are both convex on J > 0
        convex_partials=True,
    )


@dataclass(frozen=True)
class EstimatorCheck:
    omega: np.ndarray
    exact: np.ndarray
    relative_error: float
    tolerance: float = 0.05

    @property
    def passed(self) -> bool:
        return self.relative_error <= self.tolerance


def estimator_check(env: Environment, policy: PolicyParams, schedule: DiscountSchedule,
                    utility: UtilitySpec, n1: int, n2: int, seed: int = 0, repeats: int = 1,
                    tolerance: float = 0.05) -> EstimatorCheck:
    """Mean of ``repeats`` batch gradients against the finite-difference gradient of f(J_H)."""
    model = env.require_model()
    factory = StreamFactory(seed)
    omegas = []
    for r in range(repeats):
        returns = estimate_returns(
            sample_batch(env, policy, schedule, factory.streams(r, BATCH_RETURNS, n2)), schedule)
        grad_batch = sample_batch(env, policy, schedule, factory.streams(r, BATCH_GRADIENT, n1))
        omegas.append(batch_gradient(grad_batch, returns, utility, policy, schedule).omega)
    omega = np.mean(omegas, axis=0)
    exact = exact_gradient(model, policy, schedule, utility)
    scale = np.linalg.norm(exact)
    error = float(np.linalg.norm(omega - exact) / scale) if scale > 0 else float(np.linalg.norm(omega))
    logger.info('Estimator vs exact gradient: relative error %.4f (tolerance %.2f)', error, tolerance)
    return EstimatorCheck(omega, exact, error, tolerance)

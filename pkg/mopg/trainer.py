"""
Episode loop: estimate the returns from one batch, the gradient from an
independent batch, then take an ascent step.
"""
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .config import Config
from .envs import Environment
from .errors import ConfigurationError, TrainingAborted
from .estimator import VARIANTS, ReturnEstimate, batch_gradient, estimate_returns
from .logger import logger
from .mdp import DiscountSchedule, check_dimensions, sample_batch
from .policy import LOG_POLICY_SMOOTHNESS, PolicyParams
from .streams import BATCH_EVAL, BATCH_GRADIENT, BATCH_RETURNS, StreamFactory, StreamLedger
from .utility import UtilitySpec, partial_bound, value

STEP_RULES = ('constant', 'adam')
EVAL_SOURCES = ('n2_batch', 'fresh_batch')


# ---------------------------------------------------------------- step rules

class ConstantStep:
    """theta <- theta + eta * omega."""

    def __init__(self, eta: float):
        self.eta = float(eta)

    def step(self, theta: np.ndarray, omega: np.ndarray):
        theta += self.eta * omega


class AdamStep:
    """Adam moments with bias correction, applied in the ascent direction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, theta: np.ndarray, omega: np.ndarray):
        if self.m is None:
            self.m = np.zeros_like(omega)
            self.v = np.zeros_like(omega)
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * omega
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (omega * omega)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        theta += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


StepRule = Union[ConstantStep, AdamStep]


@dataclass(frozen=True)
class StepRuleSpec:
    kind: str = 'adam'
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in STEP_RULES:
            raise ConfigurationError(f"unknown optimizer '{self.kind}' (choose from {', '.join(STEP_RULES)})")
        # eta = 0 is a valid constant step (null update)
        if self.lr < 0 or (self.kind == 'adam' and self.lr == 0):
            raise ConfigurationError(f'learning rate must be > 0, got {self.lr}')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError('Adam betas must lie in [0, 1)')
        if not self.eps > 0:
            raise ConfigurationError(f'eps must be > 0, got {self.eps}')

    def build(self) -> StepRule:
        if self.kind == 'constant':
            return ConstantStep(self.lr)
        return AdamStep(self.lr, self.beta1, self.beta2, self.eps)


def apply_step(rule: StepRule, theta: np.ndarray, omega: np.ndarray):
    """Update ``theta`` in place; both arrays share one shape."""
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size != theta.size:
        raise ConfigurationError(f'step direction of size {omega.size} for {theta.size} parameters')
    flat = theta.reshape(-1)
    rule.step(flat, omega)
    if not np.shares_memory(flat, theta):
        theta[...] = flat.reshape(theta.shape)


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class EvalSource:
    kind: str = 'n2_batch'
    size: int = 0

    def __post_init__(self):
        if self.kind not in EVAL_SOURCES:
            raise ConfigurationError(
                f"unknown eval_objective_source '{self.kind}' (choose from {', '.join(EVAL_SOURCES)})"
            )
        if self.kind == 'fresh_batch' and self.size < 1:
            raise ConfigurationError('fresh_batch evaluation needs size >= 1')


@dataclass(frozen=True)
class TrainerConfig:
    episodes: int
    n1: int
    n2: int
    schedule: DiscountSchedule
    utility: UtilitySpec
    step_rule: StepRuleSpec = field(default_factory=StepRuleSpec)
    seed: int = 0
    eval_source: EvalSource = field(default_factory=EvalSource)
    variant: str = 'reward_to_go'

    def __post_init__(self):
        for name in ('episodes', 'n1', 'n2'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.seed < 0:
            raise ConfigurationError(f'seed must be non-negative, got {self.seed}')
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown estimator variant '{self.variant}'")


# ---------------------------------------------------------------- run log

@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    objective: float
    j_hat: Tuple[float, ...]
    grad_norm: float
    clamped: bool
    ms: float


@dataclass
class RunLog:
    num_objectives: int
    records: List[EpisodeRecord] = field(default_factory=list)
    smoothness: float = float('inf')
    ledger: Optional[StreamLedger] = None

    def append(self, record: EpisodeRecord):
        if self.records and record.episode <= self.records[-1].episode:
            raise ConfigurationError('episode indices must increase')
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def header(self) -> List[str]:
        return (['episode', 'objective'] + [f'J_{m}' for m in range(self.num_objectives)]
                + ['grad_norm', 'clamped', 'ms'])

    def to_csv(self, path: Union[str, Path], record_timing: Optional[bool] = None) -> Path:
        """Write one row per episode; ``ms`` is 0 unless timing is recorded."""
        timing = Config.RECORD_TIMING if record_timing is None else record_timing
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', newline='', encoding='utf-8') as handle:
            writer = csv.writer(handle)
            writer.writerow(self.header())
            for r in self.records:
                writer.writerow(
                    [r.episode, repr(r.objective)] + [repr(j) for j in r.j_hat]
                    + [repr(r.grad_norm), int(r.clamped), repr(r.ms) if timing else 0]
                )
        return path


# ---------------------------------------------------------------- training

def smoothness_constant(num_objectives: int, partial_bound_c: float, reward_max: float,
                        gamma: float, log_policy_smoothness: float = LOG_POLICY_SMOOTHNESS) -> float:
    """L_J = M * C * B * r_max / (1 - gamma)^2; infinite when gamma = 1."""
    if gamma >= 1.0:
        return float('inf')
    return num_objectives * partial_bound_c * log_policy_smoothness * reward_max / (1.0 - gamma) ** 2


def evaluate_objective(env: Environment, policy: PolicyParams, schedule: DiscountSchedule,
                       utility: UtilitySpec, size: int, factory: StreamFactory,
                       episode: int = 0) -> Tuple[float, ReturnEstimate]:
    """f(J_hat) from a fresh batch drawn on the evaluation streams of ``episode``."""
    batch = sample_batch(env, policy, schedule, factory.streams(episode, BATCH_EVAL, size))
    estimate = estimate_returns(batch, schedule)
    return value(utility, estimate.j_hat), estimate


def train(env: Environment, policy: PolicyParams, config: TrainerConfig,
          ledger: Optional[StreamLedger] = None) -> RunLog:
    """Run ``config.episodes`` ascent steps on ``policy`` (updated in place)."""
    check_dimensions(env, policy)
    schedule, utility = config.schedule, config.utility
    ledger = ledger if ledger is not None else StreamLedger()
    factory = StreamFactory(config.seed, ledger)
    rule = config.step_rule.build()

    m = env.spec.num_objectives
    l_j = smoothness_constant(m, partial_bound(utility, utility.clamp_floor, m),
                              env.spec.reward_max, schedule.gamma)
    run_log = RunLog(num_objectives=m, smoothness=l_j, ledger=ledger)
    logger.info('Training on %s: K=%d N1=%d N2=%d H=%d gamma=%g %s(lr=%g) seed=%d',
                env.name, config.episodes, config.n1, config.n2, schedule.horizon,
                schedule.gamma, config.step_rule.kind, config.step_rule.lr, config.seed)
    if np.isfinite(l_j):
        logger.info('L_J=%.4g; constant step 1/(4 L_J)=%.4g', l_j, 1.0 / (4.0 * l_j))

    for k in range(config.episodes):
        started = time.perf_counter()
        returns_batch = sample_batch(env, policy, schedule,
                                     factory.streams(k, BATCH_RETURNS, config.n2))
        returns = estimate_returns(returns_batch, schedule)
        grad_batch = sample_batch(env, policy, schedule,
                                  factory.streams(k, BATCH_GRADIENT, config.n1))
        estimate = batch_gradient(grad_batch, returns, utility, policy, schedule, config.variant)

        if config.eval_source.kind == 'fresh_batch':
            objective, _ = evaluate_objective(env, policy, schedule, utility,
                                              config.eval_source.size, factory, k)
        else:
            objective = value(utility, returns.j_hat)

        record = EpisodeRecord(
            episode=k,
            objective=float(objective),
            j_hat=tuple(float(j) for j in returns.j_hat),
            grad_norm=estimate.norm,
            clamped=estimate.clamped,
            ms=(time.perf_counter() - started) * 1000.0,
        )
        if not np.all(np.isfinite(estimate.omega)):
            logger.error('Non-finite gradient at episode %d (J_hat=%s); aborting', k, record.j_hat)
            raise TrainingAborted(f'non-finite gradient at episode {k}', run_log, record)

        apply_step(rule, policy.theta, estimate.omega)
        run_log.append(record)
        logger.debug('episode=%d objective=%.6g |omega|=%.4g clamped=%s',
                     k, record.objective, record.grad_norm, record.clamped)

    logger.info('Finished %d episodes; final objective %.6g', len(run_log), run_log.records[-1].objective)
    return run_log

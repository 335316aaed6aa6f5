"""
Tabular softmax policy.

theta[s, a] are the logits; pi(a|s) = softmax(theta[s, :])[a]. The score
grad_theta log pi(a|s) is non-zero only on row s, where it equals
1{a' = a} - pi(a'|s).
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ArgumentError, ConfigurationError
from .mdp import categorical_inverse

# ||score||_2 <= sqrt(2): (1 - pi_a)^2 + sum_{a' != a} pi_a'^2 <= 2
SCORE_NORM_BOUND = float(np.sqrt(2.0))
# Largest eigenvalue of diag(pi) - pi pi^T, the Hessian of -log pi in one row
LOG_POLICY_SMOOTHNESS = 0.5


@dataclass
class PolicyParams:
    """Logit table of shape (|S|, |A|); the trainer updates ``theta`` in place."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True)
        if theta.ndim != 2 or theta.size == 0:
            raise ConfigurationError(f'theta must be a non-empty 2-D table, got shape {theta.shape}')
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError('theta entries must be finite')
        self.theta = np.ascontiguousarray(theta)

    @property
    def num_states(self) -> int:
        return self.theta.shape[0]

    @property
    def num_actions(self) -> int:
        return self.theta.shape[1]

    @property
    def dim(self) -> int:
        return self.theta.size

    def probabilities(self) -> np.ndarray:
        """(|S|, |A|) action probabilities for every state."""
        return softmax(self.theta, axis=1)

    def flatten(self) -> np.ndarray:
        return self.theta.reshape(-1).copy()

    @classmethod
    def unflatten(cls, vector: np.ndarray, num_states: int, num_actions: int) -> 'PolicyParams':
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (num_states * num_actions,):
            raise ConfigurationError(
                f'vector of shape {vector.shape} cannot hold a {num_states}x{num_actions} table'
            )
        return cls(vector.reshape(num_states, num_actions))

    def copy(self) -> 'PolicyParams':
        return PolicyParams(self.theta)


def init_policy(num_states: int, num_actions: int, scale: float = 0.0,
                seed: Optional[int] = None) -> PolicyParams:
    """All-zero logits (uniform policy), optionally perturbed by N(0, scale^2)."""
    theta = np.zeros((num_states, num_actions))
    if scale > 0:
        theta += scale * np.random.default_rng(seed).standard_normal(theta.shape)
    return PolicyParams(theta)


def _check_state(policy: PolicyParams, s: int):
    if not 0 <= s < policy.num_states:
        raise ArgumentError(f'state {s} outside [0, {policy.num_states})')


def _check_action(policy: PolicyParams, a: int):
    if not 0 <= a < policy.num_actions:
        raise ArgumentError(f'action {a} outside [0, {policy.num_actions})')


def action_probabilities(policy: PolicyParams, s: int) -> np.ndarray:
    _check_state(policy, s)
    return softmax(policy.theta[s])


def sample_action(policy: PolicyParams, s: int, stream: np.random.Generator) -> int:
    cumulative = np.cumsum(action_probabilities(policy, s))
    return int(categorical_inverse(cumulative, np.array([stream.random()]))[0])


def log_prob(policy: PolicyParams, s: int, a: int) -> float:
    _check_state(policy, s)
    _check_action(policy, a)
    return float(policy.theta[s, a] - logsumexp(policy.theta[s]))


def score(policy: PolicyParams, s: int, a: int) -> np.ndarray:
    """Dense grad_theta log pi(a|s), flattened in row-major (state, action) order."""
    _check_action(policy, a)
    out = np.zeros_like(policy.theta)
    out[s] = -action_probabilities(policy, s)
    out[s, a] += 1.0
    return out.reshape(-1)


def save_theta(policy: PolicyParams, path: Union[str, Path]) -> Path:
    """Write a ``state,action,value`` snapshot."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['state', 'action', 'value'])
        for (s, a), value in np.ndenumerate(policy.theta):
            writer.writerow([s, a, repr(float(value))])
    return path


def load_theta(path: Union[str, Path]) -> PolicyParams:
    with Path(path).open('r', newline='', encoding='utf-8') as handle:
        rows = [(int(r['state']), int(r['action']), float(r['value'])) for r in csv.DictReader(handle)]
    if not rows:
        raise ConfigurationError(f'theta snapshot {path} is empty')
    num_states = max(r[0] for r in rows) + 1
    num_actions = max(r[1] for r in rows) + 1
    if len(rows) != num_states * num_actions:
        raise ConfigurationError(f'theta snapshot {path} is missing entries')
    theta = np.zeros((num_states, num_actions))
    for s, a, value in rows:
        theta[s, a] = value
    return PolicyParams(theta)

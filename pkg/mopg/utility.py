"""
Concave joint objectives f(J) over the vector of per-objective returns.

  alpha_fair_inverse: f = -sum_k c / J_k        df/dJ_m = c / J_m^2
  sum_log:            f =  sum_k log(J_k / c)   df/dJ_m = 1 / J_m
  weighted_sum:       f =  sum_k w_k J_k        df/dJ_m = w_m

Non-linear kinds evaluate at max(J, clamp_floor) so that an unserved objective
(J_m = 0) still yields finite values and partials.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ArgumentError, ConfigurationError

KINDS = ('alpha_fair_inverse', 'sum_log', 'weighted_sum')


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    scale: float = 1.0
    clamp_floor: float = 1e-6
    # weighted_sum only; None means every weight equals ``scale``
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown utility '{self.kind}' (choose from {', '.join(KINDS)})")
        if not self.scale > 0:
            raise ConfigurationError(f'utility scale must be > 0, got {self.scale}')
        if not self.clamp_floor > 0:
            raise ConfigurationError(f'clamp_floor must be > 0, got {self.clamp_floor}')
        if self.weights is not None:
            if self.kind != 'weighted_sum':
                raise ConfigurationError('weights are only meaningful for weighted_sum')
            object.__setattr__(self, 'weights', tuple(float(w) for w in self.weights))

    @property
    def is_linear(self) -> bool:
        return self.kind == 'weighted_sum'

    def weight_vector(self, num_objectives: int) -> np.ndarray:
        if self.weights is None:
            return np.full(num_objectives, float(self.scale))
        if len(self.weights) != num_objectives:
            raise ConfigurationError(
                f'{len(self.weights)} weights given for {num_objectives} objectives'
            )
        return np.array(self.weights)


def _returns(u: UtilitySpec, J) -> Tuple[np.ndarray, np.ndarray]:
    J = np.asarray(J, dtype=float)
    if J.ndim != 1 or J.size == 0:
        raise ArgumentError(f'return vector must be 1-D and non-empty, got shape {J.shape}')
    if not np.all(np.isfinite(J)):
        raise ArgumentError('return vector has non-finite entries')
    if np.any(J < 0):
        raise ArgumentError(f'return vector has negative entries: {J}')
    return J, np.maximum(J, u.clamp_floor)


def is_clamped(u: UtilitySpec, J) -> bool:
    """True when the clamp floor changes at least one component."""
    if u.is_linear:
        return False
    J, _ = _returns(u, J)
    return bool(np.any(J < u.clamp_floor))


def value(u: UtilitySpec, J) -> float:
    J, Jc = _returns(u, J)
    if u.kind == 'alpha_fair_inverse':
        return float(-np.sum(u.scale / Jc))
    if u.kind == 'sum_log':
        return float(np.sum(np.log(Jc / u.scale)))
    return float(u.weight_vector(J.size) @ J)


def partials(u: UtilitySpec, J) -> np.ndarray:
    J, Jc = _returns(u, J)
    if u.kind == 'alpha_fair_inverse':
        return u.scale / Jc ** 2
    if u.kind == 'sum_log':
        return 1.0 / Jc
    return u.weight_vector(J.size)


def partial_bound(u: UtilitySpec, delta: float, num_objectives: int = 1) -> float:
    """C: bound on |df/dJ_m| over the box [delta, inf)^M (delta raised to the clamp floor)."""
    delta = max(float(delta), u.clamp_floor)
    if u.kind == 'alpha_fair_inverse':
        return u.scale / delta ** 2
    if u.kind == 'sum_log':
        return 1.0 / delta
    return float(np.max(np.abs(u.weight_vector(num_objectives))))


def lipschitz_bound(u: UtilitySpec, delta: float) -> float:
    """L_f: Lipschitz constant of each partial over [delta, inf)^M.

    Partials here depend on their own coordinate only, so L_f is the largest
    |d^2 f / dJ_m^2| on the box.
    """
    delta = max(float(delta), u.clamp_floor)
    if u.kind == 'alpha_fair_inverse':
        return 2.0 * u.scale / delta ** 3
    if u.kind == 'sum_log':
        return 1.0 / delta ** 2
    return 0.0

"""
mopg - Multi-Objective Policy Gradient
Simulator and optimization library for maximizing a concave function of
several long-term discounted objectives with a truncated, biased policy
gradient estimator.
"""

__version__ = "0.1.0"
__author__ = "Developer"

from .mdp import DiscountSchedule, MdpSpec, Trajectory, TrajectoryBatch
from .policy import PolicyParams
from .utility import UtilitySpec

__all__ = [
    "DiscountSchedule",
    "MdpSpec",
    "PolicyParams",
    "Trajectory",
    "TrajectoryBatch",
    "UtilitySpec",
]

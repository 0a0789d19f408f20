"""Tabular imitation learning by distribution matching on layered finite-horizon MDPs."""
from .mdp import (
    BoxViolationError, LayeredMdp, MdpValidationError, OccupancyMeasure, QTable, RewardTable,
    TabularPolicy, ValueTable, dual_gradient, dual_objective, induced_reward, lse, occupancy,
    occupancy_entropy, policy_return, primal_objective, rollout, soft_value_iteration,
    softmax_policy, tv_distance, validate_mdp,
)

__version__ = "0.1.0"

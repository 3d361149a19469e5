"""Policy gradients for objectives that are general functions of the occupancy measure."""

__version__ = "0.1.0"

from .mdp import PolicyParams, TabularMdp, Trajectory, policy_kernel, policy_probs, sample_trajectory, validate
from .utilities import UtilitySpec
from .exact import (
    DiscountedOperator,
    GradReport,
    OccupancyMeasure,
    discounted_operator,
    finite_diff_gradient,
    grad_check,
    occupancy_exact,
    occupancy_gradient,
    policy_gradient,
    q_value,
)
from .compatible import CompatibleApprox, fa_policy_gradient, fit
from .bootstrap import BootstrapState, StepSchedule, count_estimate, fixed_point_iterate, td_update
from .envs import EnvSpec, build, expert_occupancy
from .learner import TrainConfig, TrainTrace, run_algorithm1, run_exact_descent

"""Region-of-attraction estimation for a two-wheeled inverted pendulum.

Synthesizes saturated LQR, soft-constrained MPC and constraint-tightening MPC
controllers, certifies a Lyapunov sublevel set that is invariant under the
nonlinear LQR closed loop, and estimates the region of attraction by Monte
Carlo simulation using that set as the stopping condition.
"""
from .model import (
    LinearDiscreteModel,
    TwipParams,
    continuous_dynamics,
    discretize_zoh,
    linear_model,
    linearize,
    step_nonlinear,
)

__version__ = "0.1.0"

__all__ = [
    "TwipParams", "LinearDiscreteModel", "continuous_dynamics", "linearize",
    "discretize_zoh", "linear_model", "step_nonlinear",
]

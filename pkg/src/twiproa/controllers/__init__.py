"""State-feedback policies: saturated LQR, soft-constrained MPC and tube MPC."""
from .base import DIVERGED, INFEASIBLE, OK, ControllerPolicy
from .lqr import LQRController
from .mpc import CondensedQp, CTMPCController, MPCController, state_polytope
from .qp import QpProblem, QpSolution, kkt_residuals, solve_qp
from .tube import Tube, contraction_factor, synthesize_tube

__all__ = [
    "ControllerPolicy", "LQRController", "MPCController", "CTMPCController", "CondensedQp",
    "QpProblem", "QpSolution", "solve_qp", "kkt_residuals", "Tube", "synthesize_tube",
    "contraction_factor", "state_polytope", "OK", "INFEASIBLE", "DIVERGED",
]

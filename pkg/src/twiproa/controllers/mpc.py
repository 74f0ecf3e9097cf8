"""Soft-constrained linear MPC and constraint-tightening (tube) MPC.

Both policies condense the prediction ``x_k = A^k x_0 + sum_j A^(k-1-j) B u_j``
into the inputs, keep the slack variables as explicit decision variables and
solve the resulting QP with the package's active-set solver, warm-started
from the shifted previous plan.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .. import defaults
from .._validation import check_square
from ..control_math import solve_dare
from ..exceptions import SynthesisError
from ..geometry import (
    Ellipsoid,
    Interval,
    Polytope,
    max_positively_invariant,
    max_robust_positively_invariant,
    pontryagin_diff_ellipsoid,
    pontryagin_diff_interval,
)
from .base import INFEASIBLE, OK, ControllerPolicy
from .qp import QpProblem, solve_qp
from .tube import synthesize_tube

logger = logging.getLogger(__name__)


def state_polytope(bounds) -> Polytope:
    b = np.asarray(bounds, dtype=float)
    return Polytope.from_box(-b, b)


def prediction_matrices(A, B, N):
    """``Phi`` (N n x n) and ``Gamma`` (N n x N m) with ``[x_1..x_N] = Phi x_0 + Gamma U``."""
    n, m = B.shape
    Phi = np.zeros((N * n, n))
    Gamma = np.zeros((N * n, N * m))
    Ak = np.eye(n)
    powers = [Ak]
    for k in range(1, N + 1):
        Ak = A @ Ak
        powers.append(Ak)
        Phi[(k - 1) * n:k * n] = Ak
    for k in range(1, N + 1):
        for j in range(k):
            Gamma[(k - 1) * n:k * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
    return Phi, Gamma


@dataclass
class CondensedQp:
    """QP skeleton parameterized by the initial state.

    Decision vector ``y = [u_0 .. u_{N-1}, slacks]``. Stage constraints act on
    ``x_1 .. x_{N-1}`` (the stage-0 constraint involves only the measured
    state and cannot be influenced) and the terminal set on ``x_N``.
    ``slack_mode`` is ``"row"`` for one slack per constraint row or
    ``"stage"`` for one slack shared by all rows of a stage.
    """

    problem: QpProblem
    N: int
    n_slack: int
    f_x: np.ndarray        # f = f_x @ x0
    b_const: np.ndarray    # b_in = b_const - G_x @ x0
    G_x: np.ndarray
    G_u: np.ndarray        # row coefficients on U
    slack_of_row: np.ndarray
    slack_mode: str
    Phi: np.ndarray
    Gamma: np.ndarray
    stage_rows: list       # (start, stop) row ranges for stages 1..N (N = terminal)

    @classmethod
    def build(cls, A, B, Q, R, Q_N, N, stage_sets, terminal_set, input_bounds, rho, slack_mode):
        n, m = B.shape
        if m != 1:
            raise ValueError("only single-input models are supported")
        if len(stage_sets) != N - 1:
            raise ValueError(f"need {N - 1} stage sets, got {len(stage_sets)}")
        Phi, Gamma = prediction_matrices(A, B, N)
        Qbar = np.zeros((N * n, N * n))
        for k in range(N - 1):
            Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = Q
        Qbar[(N - 1) * n:, (N - 1) * n:] = Q_N
        Rbar = np.kron(np.eye(N), R)
        H_u = 2.0 * (Gamma.T @ Qbar @ Gamma + Rbar)
        f_x_u = 2.0 * Gamma.T @ Qbar @ Phi

        rows_x, rows_u, offs, slack_idx, stage_rows = [], [], [], [], []
        n_slack = 0
        sets = list(stage_sets) + [terminal_set]
        start = 0
        for k, S in enumerate(sets, start=1):
            Pk = Phi[(k - 1) * n:k * n]
            Gk = Gamma[(k - 1) * n:k * n]
            rows_x.append(S.Lambda @ Pk)
            rows_u.append(S.Lambda @ Gk)
            offs.append(S.b)
            if slack_mode == "row":
                slack_idx.append(n_slack + np.arange(S.n_rows))
                n_slack += S.n_rows
            elif slack_mode == "stage":
                slack_idx.append(np.full(S.n_rows, n_slack))
                n_slack += 1
            else:
                raise ValueError(f"unknown slack mode {slack_mode!r}")
            stage_rows.append((start, start + S.n_rows))
            start += S.n_rows
        G_x = np.vstack(rows_x)
        G_u = np.vstack(rows_u)
        b_const = np.concatenate(offs)
        slack_of_row = np.concatenate(slack_idx).astype(int)
        n_rows = len(b_const)
        nU = N * m

        A_in = np.zeros((n_rows, nU + n_slack))
        A_in[:, :nU] = G_u
        A_in[np.arange(n_rows), nU + slack_of_row] = -1.0
        H = np.zeros((nU + n_slack, nU + n_slack))
        H[:nU, :nU] = 0.5 * (H_u + H_u.T)
        H[nU:, nU:] = 2.0 * rho * np.eye(n_slack)
        lo = np.array([b[0] for b in input_bounds], dtype=float)
        hi = np.array([b[1] for b in input_bounds], dtype=float)
        lb = np.concatenate([lo, np.zeros(n_slack)])
        ub = np.concatenate([hi, np.full(n_slack, np.inf)])
        f_x = np.zeros((nU + n_slack, n))
        f_x[:nU] = f_x_u
        problem = QpProblem(H, np.zeros(nU + n_slack), A_in=A_in, b_in=b_const.copy(), lb=lb, ub=ub)
        return cls(problem, N, n_slack, f_x, b_const, G_x, G_u, slack_of_row, slack_mode,
                   Phi, Gamma, stage_rows)

    def set_state(self, x0):
        self.problem.f = self.f_x @ x0
        self.problem.b_in = self.b_const - self.G_x @ x0

    def feasible_point(self, U):
        """Complete an input plan with the smallest feasible slacks."""
        p = self.problem
        nU = self.N
        U = np.clip(U, p.lb[:nU], p.ub[:nU])
        r = self.G_u @ U - p.b_in
        eps = np.zeros(self.n_slack)
        np.maximum.at(eps, self.slack_of_row, r)
        return np.concatenate([U, eps])

    def predicted_states(self, x0, U):
        n = len(x0)
        return (self.Phi @ x0 + self.Gamma @ U).reshape(self.N, n)


class MPCController(ControllerPolicy):
    """Linear MPC with softened state and terminal constraints and hard input bounds.

    Parameters
    ----------
    horizon : int
        Prediction horizon ``N``.
    Q, R : array_like, optional
        Stage weights; default to the LQR weights.
    u_max : float
        Hard input bound [V].
    state_bounds : sequence of 4 floats, optional
        Symmetric bounds ``|x_i| <= b_i``; ``inf`` leaves a component free.
    slack_weight : float
        Quadratic penalty ``rho`` on the slack variables.
    warm_start : bool
        Seed each solve with the shifted previous plan.

    Attributes
    ----------
    K_, P_ : ndarray
        LQR gain and Riccati solution (terminal cost ``Q_N = P_``).
    state_set_, terminal_set_ : Polytope
    qp_ : CondensedQp
    """

    slack_mode = "row"

    def __init__(self, horizon=defaults.HORIZON, Q=None, R=None, u_max=defaults.U_MAX,
                 state_bounds=None, slack_weight=defaults.MPC_SLACK_WEIGHT, warm_start=True):
        self.horizon = horizon
        self.Q = Q
        self.R = R
        self.u_max = u_max
        self.state_bounds = state_bounds
        self.slack_weight = slack_weight
        self.warm_start = warm_start

    def _common_fit(self, model):
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.u_max > 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        if not self.slack_weight > 0:
            raise ValueError(f"slack_weight must be positive, got {self.slack_weight}")
        n = model.n_states
        self.Q_ = check_square(defaults.LQR_Q if self.Q is None else self.Q, n, "Q")
        self.R_ = check_square(defaults.LQR_R if self.R is None else self.R, model.n_inputs, "R")
        self.P_, self.K_ = solve_dare(model.A, model.B, self.Q_, self.R_)
        self.A_cl_ = model.A - model.B @ self.K_
        bounds = defaults.STATE_BOUNDS if self.state_bounds is None else self.state_bounds
        self.state_set_ = state_polytope(bounds)
        self.input_set_ = Interval.symmetric(self.u_max)
        self.model_ = model

    def fit(self, model, y=None):
        self._common_fit(model)
        N = int(self.horizon)
        self.terminal_set_ = max_positively_invariant(self.A_cl_, self.state_set_, self.input_set_, self.K_)
        self.qp_ = CondensedQp.build(
            model.A, model.B, self.Q_, self.R_, self.P_, N,
            [self.state_set_] * (N - 1), self.terminal_set_,
            [(self.input_set_.lo, self.input_set_.hi)] * N,
            self.slack_weight, self.slack_mode,
        )
        self.reset()
        return self

    def reset(self):
        self._last_U = None
        self._last_ws = None
        self.last_solution_ = None
        return self

    def _initial_plan(self, x):
        """Shifted previous plan with an LQR tail, or the LQR rollout on a cold start."""
        N = self.qp_.N
        if self.warm_start and self._last_U is not None:
            U_prev = self._last_U
            x_pred = self.qp_.predicted_states(x, np.concatenate([U_prev[1:], [0.0]]))
            tail = -(self.K_[0] @ x_pred[N - 2]) if N >= 2 else -(self.K_[0] @ x)
            return np.concatenate([U_prev[1:], [tail]])
        U = np.empty(N)
        z = x.copy()
        A, B = self.model_.A, self.model_.B[:, 0]
        for k in range(N):
            U[k] = np.clip(-(self.K_[0] @ z), self.input_set_.lo, self.input_set_.hi)
            z = A @ z + B * U[k]
        return U

    def plan(self, x):
        """Solve the QP at ``x`` and return the full :class:`QpSolution`."""
        check_is_fitted(self)
        x = np.asarray(x, dtype=float)
        qp = self.qp_
        qp.set_state(x)
        y0 = qp.feasible_point(self._initial_plan(x))
        ws = self._last_ws if self.warm_start else None
        sol = solve_qp(qp.problem, y0, working_set=ws)
        self.last_solution_ = sol
        if sol.ok:
            self._last_U = sol.x[:qp.N].copy()
            self._last_ws = sol.working_set
        else:
            self._last_U = None
            self._last_ws = None
        return sol

    def _compute(self, x):
        sol = self.plan(x)
        if not sol.ok:
            logger.debug("QP returned %s at x=%s", sol.status, x)
            return 0.0, INFEASIBLE
        u = float(np.clip(sol.x[0], -self.u_max, self.u_max))
        return u, OK

    def planned_inputs(self):
        return None if self.last_solution_ is None else self.last_solution_.x[:self.qp_.N]


class CTMPCController(MPCController):
    """Constraint-tightening MPC on the nominal model with an ellipsoidal funnel.

    Stage ``i`` uses ``X - F_i`` and ``U - K_tube F_i``; the terminal set is
    the maximal robust positively invariant set under the LQR feedback,
    tightened by ``F_N``. All rows of a stage share a single slack. Because
    ``z_0 = x`` the error feedback term vanishes and the applied input is the
    first nominal input ``v_0``.

    Parameters
    ----------
    alpha : float
        Tube contraction rate in ``(0, 1)``.
    w_max : float
        Input disturbance bound [V].
    (other parameters as for :class:`MPCController`)

    Attributes
    ----------
    tube_ : Tube
    deltas_ : ndarray
        Funnel sizes ``delta_0 .. delta_N``.
    rpi_set_ : Polytope
        Untightened robust invariant terminal set.
    stage_sets_ : list of Polytope
        Tightened state sets for stages ``0 .. N-1``.
    stage_inputs_ : list of Interval
        Tightened input sets for stages ``0 .. N-1``.
    terminal_set_ : Polytope
        ``rpi_set_`` tightened by ``F_N``.
    """

    slack_mode = "stage"

    def __init__(self, horizon=defaults.HORIZON, Q=None, R=None, u_max=defaults.U_MAX,
                 state_bounds=None, slack_weight=defaults.CTMPC_SLACK_WEIGHT, warm_start=True,
                 alpha=defaults.TUBE_ALPHA, w_max=defaults.W_MAX):
        super().__init__(horizon=horizon, Q=Q, R=R, u_max=u_max, state_bounds=state_bounds,
                         slack_weight=slack_weight, warm_start=warm_start)
        self.alpha = alpha
        self.w_max = w_max

    def fit(self, model, y=None):
        self._common_fit(model)
        N = int(self.horizon)
        self.tube_ = synthesize_tube(model, self.alpha, self.w_max)
        self.deltas_ = self.tube_.deltas(N)
        funnels = [Ellipsoid(self.tube_.P_tube, d**2) for d in self.deltas_]
        self.stage_sets_ = [pontryagin_diff_ellipsoid(self.state_set_, F) for F in funnels[:N]]
        self.stage_inputs_ = [pontryagin_diff_interval(self.input_set_, self.tube_.K_tube, F)
                              for F in funnels[:N]]
        self.rpi_set_ = max_robust_positively_invariant(
            self.A_cl_, self.state_set_, self.input_set_, self.K_, model.B, self.w_max)
        self.terminal_set_ = pontryagin_diff_ellipsoid(self.rpi_set_, funnels[N])
        if any(U.is_empty for U in self.stage_inputs_):
            raise SynthesisError("tightened input set is empty; w_max too large for u_max")
        if self.terminal_set_.is_empty:
            raise SynthesisError("tightened terminal set is empty")
        self.qp_ = CondensedQp.build(
            model.A, model.B, self.Q_, self.R_, self.P_, N,
            self.stage_sets_[1:], self.terminal_set_,
            [(U.lo, U.hi) for U in self.stage_inputs_],
            self.slack_weight, self.slack_mode,
        )
        self.reset()
        return self

    def tightened_input_bound(self, i: int) -> float:
        return self.stage_inputs_[i].hi

"""Saturated linear quadratic regulator."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .. import defaults
from .._validation import check_square, check_states
from ..control_math import solve_dare
from .base import OK, ControllerPolicy


class LQRController(ControllerPolicy):
    """``u = clip(-K x, -u_max, u_max)`` with ``K`` from the discrete Riccati equation.

    Parameters
    ----------
    Q : (n, n) array_like, optional
        State weight; defaults to the published weights.
    R : (1, 1) array_like, optional
        Input weight; defaults to the published weight.
    u_max : float
        Symmetric actuator limit [V].

    Attributes
    ----------
    K_ : (1, n) ndarray
        Feedback gain (``u = -K_ x`` before saturation).
    P_ : (n, n) ndarray
        Riccati solution, used as terminal cost by the MPC policies.
    A_cl_ : (n, n) ndarray
        Unsaturated closed-loop matrix ``A - B K_``.
    """

    def __init__(self, Q=None, R=None, u_max=defaults.U_MAX):
        self.Q = Q
        self.R = R
        self.u_max = u_max

    def fit(self, model, y=None):
        n = model.n_states
        Q = check_square(defaults.LQR_Q if self.Q is None else self.Q, n, "Q")
        R = check_square(defaults.LQR_R if self.R is None else self.R, model.n_inputs, "R")
        if not self.u_max > 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        self.P_, self.K_ = solve_dare(model.A, model.B, Q, R)
        self.A_cl_ = model.A - model.B @ self.K_
        self.model_ = model
        return self

    @classmethod
    def from_gain(cls, K, model, u_max=defaults.U_MAX):
        """Wrap a known gain without solving the Riccati equation."""
        obj = cls(u_max=u_max)
        obj.K_ = np.atleast_2d(np.asarray(K, dtype=float))
        obj.P_ = None
        obj.A_cl_ = model.A - model.B @ obj.K_
        obj.model_ = model
        return obj

    def _compute(self, x):
        return float(np.clip(-(self.K_[0] @ x), -self.u_max, self.u_max)), OK

    def predict(self, X):
        check_is_fitted(self)
        X = check_states(X)
        return np.clip(-(X @ self.K_[0]), -self.u_max, self.u_max)

    def unsaturated(self, X):
        """``-K x`` without the actuator limit."""
        check_is_fitted(self)
        return -(np.asarray(X, dtype=float) @ self.K_[0])

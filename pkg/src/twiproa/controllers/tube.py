"""Offline tube synthesis for the constraint-tightening MPC."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..control_math import solve_dare, solve_discrete_lyapunov
from ..exceptions import SynthesisError

CONTRACTION_TOL = 1e-9


@dataclass(frozen=True)
class Tube:
    """Error feedback ``u = v + K_tube e`` and the ellipsoidal funnel it induces.

    The error sets are ``F_i = {e : e^T P_tube e <= delta_i^2}`` with
    ``delta_0 = 0`` and ``delta_{i+1} = alpha delta_i + delta_1``.
    """

    K_tube: np.ndarray
    P_tube: np.ndarray
    alpha: float
    delta_1: float

    def deltas(self, N: int) -> np.ndarray:
        """``delta_0 .. delta_N``."""
        d = np.zeros(N + 1)
        if N >= 1:
            d[1] = self.delta_1
        for i in range(1, N):
            d[i + 1] = self.alpha * d[i] + self.delta_1
        return d

    def contraction_factor(self, A, B) -> float:
        """Largest eigenvalue of ``L^-1 A_K^T P A_K L^-T`` where ``P = L L^T``."""
        return contraction_factor(A, B, self.K_tube, self.P_tube)


def contraction_factor(A, B, K_tube, P_tube) -> float:
    A_K = A + B @ np.atleast_2d(K_tube)
    L = np.linalg.cholesky(P_tube)
    M = np.linalg.solve(L, A_K.T @ P_tube @ A_K)
    M = np.linalg.solve(L, M.T).T
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def synthesize_tube(model, alpha: float, w_max: float, Q=None, R=None) -> Tube:
    """Tube gain and shape with ``(A + B K)^T P (A + B K) <= alpha P``.

    A Riccati gain for the scaled pair ``(A, B) / sqrt(alpha)`` makes
    ``(A + B K) / sqrt(alpha)`` Schur stable; the Lyapunov matrix of that
    scaled closed loop then satisfies the contraction inequality with margin
    ``alpha * I``.

    Raises
    ------
    SynthesisError
        If ``alpha`` is outside ``(0, 1)`` or the certificate fails.
    """
    if not 0 < alpha < 1:
        raise SynthesisError(f"contraction rate must lie in (0, 1), got {alpha}")
    if w_max < 0:
        raise SynthesisError(f"w_max must be non-negative, got {w_max}")
    A, B = model.A, model.B
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    R = np.eye(m) if R is None else R
    s = np.sqrt(alpha)
    # the scaled pair is poorly conditioned for small alpha; the contraction
    # certificate below, not the Riccati residual, decides acceptance
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        _, K_d = solve_dare(A / s, B / s, Q, R, residual_tol=np.inf)
        K_tube = -K_d
        P_tube = solve_discrete_lyapunov((A + B @ K_tube) / s, np.eye(n))
    rate = contraction_factor(A, B, K_tube, P_tube)
    if rate > alpha + CONTRACTION_TOL:
        raise SynthesisError(f"tube contraction certificate failed: {rate:.12f} > {alpha}")
    # worst case over the two extreme disturbances +-w_max is symmetric
    delta_1 = float(w_max * np.sqrt(B[:, 0] @ P_tube @ B[:, 0]))
    return Tube(K_tube, P_tube, float(alpha), delta_1)

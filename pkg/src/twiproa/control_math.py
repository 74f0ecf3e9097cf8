"""Dense linear-algebra solvers used by synthesis and certification."""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import SynthesisError

SYMMETRY_TOL = 1e-12


def as_symmetric(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return ``(M + M.T) / 2`` after checking ``M`` is symmetric to ``tol``.

    The tolerance is relative to the largest entry of ``M``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    scale = max(1.0, np.max(np.abs(M))) if M.size else 1.0
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    return 0.5 * (M + M.T)


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(A)))))


def spectral_norm(M) -> float:
    """Largest singular value of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.norm(M, 2))


def eig_sym(S):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    return np.linalg.eigh(as_symmetric(S))


def _unstabilizable_modes(A, B, tol=1e-9):
    """Eigenvalues with ``|lambda| >= 1`` that fail the PBH rank test."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            bad.append(complex(lam))
    return bad


def riccati_residual(P, A, B, Q, R) -> float:
    """Relative Frobenius residual of the DARE at ``P``."""
    BtPA = B.T @ P @ A
    rhs = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
    return float(np.linalg.norm(P - rhs) / max(np.linalg.norm(P), 1e-300))


def solve_dare(A, B, Q, R, *, residual_tol: float = 1e-9):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Parameters
    ----------
    A : (n, n) array_like
    B : (n, m) array_like
    Q : (n, n) array_like
        Positive semidefinite state weight.
    R : (m, m) array_like
        Positive definite input weight.

    Returns
    -------
    P : (n, n) ndarray
        Symmetric positive definite cost-to-go matrix.
    K : (m, n) ndarray
        Optimal gain for the control law ``u = -K x``.

    Raises
    ------
    SynthesisError
        If ``(A, B)`` is not stabilizable or the solution misses the residual
        bound.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = as_symmetric(Q)
    R = as_symmetric(np.atleast_2d(R))
    bad = _unstabilizable_modes(A, B)
    if bad:
        raise SynthesisError(f"(A, B) is not stabilizable; uncontrollable unstable modes {bad}")
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SynthesisError(f"DARE solver failed: {exc}") from exc
    P = 0.5 * (P + P.T)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    res = riccati_residual(P, A, B, Q, R)
    if res > residual_tol:
        raise SynthesisError(f"DARE residual {res:.2e} exceeds {residual_tol:.0e}")
    rad = spectral_radius(A - B @ K)
    if rad >= 1.0:
        raise SynthesisError(
            f"closed loop A - BK is not Schur stable (spectral radius {rad:.6f}); "
            f"eigenvalues {np.linalg.eigvals(A - B @ K)}"
        )
    return P, K


def solve_discrete_lyapunov(A_cl, Q):
    """Solve ``A_cl^T P A_cl - P = -Q`` for symmetric positive definite ``P``.

    Raises
    ------
    ValueError
        If ``A_cl`` is not Schur stable; the message names the offending
        eigenvalue.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Q = as_symmetric(Q)
    eigs = np.linalg.eigvals(A_cl)
    k = int(np.argmax(np.abs(eigs)))
    if abs(eigs[k]) >= 1.0:
        raise ValueError(
            f"A_cl is not Schur stable: eigenvalue {eigs[k]:.6g} has modulus {abs(eigs[k]):.6g}"
        )
    # scipy solves A X A^H - X + Q = 0, so pass the transpose
    P = scipy.linalg.solve_discrete_lyapunov(A_cl.T, Q)
    return 0.5 * (P + P.T)

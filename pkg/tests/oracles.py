"""Independent reference computations shared by the unit and acceptance tests.

Each oracle avoids the code path it checks: closed forms, fixed-point
iterations, truncated series, sampling or brute-force enumeration.
"""
import itertools

import numpy as np

from twiproa.geometry import Ellipsoid, Polytope


def scalar_dare(a, b, q, r):
    """Positive root of b^2 p^2 + (r (1 - a^2) - q b^2) p - q r = 0."""
    beta = r * (1 - a * a) - q * b * b
    p = (-beta + np.sqrt(beta * beta + 4 * b * b * q * r)) / (2 * b * b)
    return p, a * b * p / (r + b * b * p)


def riccati_iteration(A, B, Q, R, tol=1e-14, max_iter=200_000):
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        P_new = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            return P_new
        P = P_new
    raise AssertionError("Riccati iteration did not converge")


def lyapunov_series(A, Q, tol=1e-16):
    P = np.zeros_like(Q)
    term = Q.copy()
    while np.max(np.abs(term)) > tol * max(1.0, np.max(np.abs(P))):
        P += term
        term = A.T @ term @ A
    return P


def random_instance(rng):
    """A bounded 2-D polytope around the origin and a small ellipsoid."""
    m = int(rng.integers(3, 9))
    ang = np.linspace(0, 2 * np.pi, m, endpoint=False) + 0.3 * rng.uniform(-1, 1, m)
    L = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    X = Polytope(L, rng.uniform(0.5, 2.0, m))
    M = rng.normal(size=(2, 2))
    E = Ellipsoid(M @ M.T + 0.2 * np.eye(2), rng.uniform(0.005, 0.1))
    return X, E


def sampled_margin(x, X, E_points):
    """max over sampled e and rows of a_i (x + e) - b_i."""
    return np.max((x[None, :] + E_points) @ X.Lambda.T - X.b)


def random_spd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + 0.5 * np.eye(n)


def enumerate_qp(H, f, A, b):
    """Exact minimizer of a tiny QP with rows ``A x <= b`` by trying every active set."""
    m, n = A.shape
    best = None
    for k in range(0, min(m, n) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            As = A[S]
            K = np.block([[H, As.T], [As, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-f, b[S]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(A @ x <= b + 1e-9) and np.all(lam >= -1e-9):
                val = 0.5 * x @ H @ x + f @ x
                if best is None or val < best[1]:
                    best = (x, val)
    return best

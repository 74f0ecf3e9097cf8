"""Halfspace polytopes, ellipsoids and invariant-set computations.

Polytopes are kept in halfspace form only. Linear programs (support values,
redundancy, emptiness) go through :func:`scipy.optimize.linprog` with HiGHS.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .control_math import as_symmetric, spectral_radius
from .exceptions import SynthesisError

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9
MAX_INVARIANT_ITER = 500


def _support_lp(direction, Lambda, b):
    """``max direction @ x  s.t.  Lambda @ x <= b``; +inf if unbounded, -inf if empty."""
    res = linprog(-np.asarray(direction, dtype=float), A_ub=Lambda, b_ub=b,
                  bounds=(None, None), method="highs")
    if res.status == 0:
        return -res.fun
    if res.status == 3:
        return np.inf
    if res.status == 2:
        return -np.inf
    raise RuntimeError(f"support LP failed: {res.message}")


@dataclass(frozen=True)
class Polytope:
    """The set ``{x : Lambda @ x <= b}`` with unit-norm rows.

    Rows are normalized on construction and ``b`` rescaled accordingly. Rows
    that are identically zero are dropped when ``b >= 0`` (trivially true).
    """

    Lambda: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).ravel()
        if L.shape[0] != b.shape[0]:
            raise ValueError(f"Lambda has {L.shape[0]} rows but b has {b.shape[0]} entries")
        norms = np.linalg.norm(L, axis=1)
        zero = norms <= 1e-14
        if np.any(b[zero] < 0):
            raise ValueError("zero row with negative offset: the set is empty")
        L = L[~zero] / norms[~zero, None]
        b = b[~zero] / norms[~zero]
        L.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "Lambda", L)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.Lambda.shape[1]

    @property
    def n_rows(self) -> int:
        return self.Lambda.shape[0]

    @classmethod
    def from_box(cls, lower, upper) -> "Polytope":
        """Axis-aligned box; infinite bounds are omitted."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        rows, offs = [], []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            if np.isfinite(upper[i]):
                rows.append(e)
                offs.append(upper[i])
            if np.isfinite(lower[i]):
                rows.append(-e)
                offs.append(-lower[i])
        return cls(np.reshape(rows, (len(rows), n)), np.asarray(offs))

    @classmethod
    def universe(cls, dim: int) -> "Polytope":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def contains(self, x, tol: float = 0.0):
        """Membership of a point ``(n,)`` or batch ``(k, n)``."""
        x = np.asarray(x, dtype=float)
        if self.n_rows == 0:
            return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else True
        r = x @ self.Lambda.T - self.b
        return np.all(r <= tol, axis=-1)

    def support(self, direction) -> float:
        return _support_lp(direction, self.Lambda, self.b)

    @property
    def is_empty(self) -> bool:
        if self.n_rows == 0:
            return False
        res = linprog(np.zeros(self.dim), A_ub=self.Lambda, b_ub=self.b,
                      bounds=(None, None), method="highs")
        return res.status == 2

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(np.vstack([self.Lambda, other.Lambda]), np.concatenate([self.b, other.b]))

    def remove_redundant(self, tol: float = SUPPORT_TOL) -> "Polytope":
        """Drop duplicate rows and rows implied by the others."""
        if self.n_rows == 0:
            return self
        L, b = _dedupe(self.Lambda, self.b)
        keep = np.ones(len(b), dtype=bool)
        for i in range(len(b)):
            keep[i] = False
            # relax row i so the LP stays bounded in its own direction
            Li = np.vstack([L[keep], L[i]])
            bi = np.concatenate([b[keep], [b[i] + 1.0]])
            s = _support_lp(L[i], Li, bi)
            if s > b[i] + tol:
                keep[i] = True
        return Polytope(L[keep], b[keep])

    def equals(self, other: "Polytope", tol: float = SUPPORT_TOL) -> bool:
        """Set equality checked by mutual support-function inclusion."""
        return self.is_subset(other, tol) and other.is_subset(self, tol)

    def is_subset(self, other: "Polytope", tol: float = SUPPORT_TOL) -> bool:
        return all(self.support(a) <= bi + tol for a, bi in zip(other.Lambda, other.b))

    def to_dict(self) -> dict:
        return {"Lambda": self.Lambda.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        L = np.asarray(data["Lambda"], dtype=float)
        return cls(L.reshape(len(data["b"]), -1), data["b"])


def _dedupe(L, b, decimals: int = 12):
    """Keep the tightest offset among rows with identical normals."""
    if len(b) == 0:
        return L, b
    keys = np.round(L, decimals)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    out_L, out_b = [], []
    for g in range(inverse.max() + 1):
        idx = np.flatnonzero(inverse == g)
        j = idx[np.argmin(b[idx])]
        out_L.append(L[j])
        out_b.append(b[j])
    order = np.argsort([np.flatnonzero(inverse == g)[0] for g in range(inverse.max() + 1)])
    return np.asarray(out_L)[order], np.asarray(out_b)[order]


@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{x : x^T P x <= c}``; ``c = 0`` is the single point at the origin."""

    P: np.ndarray
    c: float
    _Pinv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = as_symmetric(self.P)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        if not (self.c >= 0 and np.isfinite(self.c)):
            raise ValueError(f"ellipsoid level must be finite and >= 0, got {self.c}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "_Pinv", np.linalg.inv(P))

    def support(self, direction):
        """``max_{x in E} a^T x = sqrt(c a^T P^-1 a)``, vectorized over rows of ``direction``."""
        a = np.atleast_2d(np.asarray(direction, dtype=float))
        q = np.einsum("ij,jk,ik->i", a, self._Pinv, a)
        out = np.sqrt(self.c * np.maximum(q, 0.0))
        return out if np.ndim(direction) > 1 else float(out[0])

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x) <= self.c + tol

    def boundary_points(self, n: int) -> np.ndarray:
        """``n`` points on the boundary of a 2-D ellipsoid, evenly spaced in angle."""
        if self.P.shape[0] != 2:
            raise ValueError("boundary_points is only defined in two dimensions")
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        circle = np.stack([np.cos(t), np.sin(t)], axis=1)
        L = np.linalg.cholesky(self.P)
        # x = sqrt(c) L^-T z maps the unit circle onto x^T P x = c
        return np.sqrt(self.c) * np.linalg.solve(L.T, circle.T).T


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]``; empty when ``lo > hi``."""

    lo: float
    hi: float

    @classmethod
    def symmetric(cls, bound: float) -> "Interval":
        return cls(-float(bound), float(bound))

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    def contains(self, u, tol: float = 0.0):
        u = np.asarray(u, dtype=float)
        return (u >= self.lo - tol) & (u <= self.hi + tol)

    def clip(self, u):
        return np.clip(u, self.lo, self.hi)


def pontryagin_diff_ellipsoid(X: Polytope, E: Ellipsoid) -> Polytope:
    """``X - E = {x : x + e in X for all e in E}`` by shifting each halfspace."""
    if X.n_rows == 0:
        return X
    return Polytope(X.Lambda, X.b - E.support(X.Lambda))


def pontryagin_diff_interval(U: Interval, K, E: Ellipsoid) -> Interval:
    """``U - K E`` where ``K E`` is the image of ``E`` under the row vector ``K``."""
    t = E.support(np.asarray(K, dtype=float).reshape(1, -1))
    t = float(np.ravel(t)[0])
    return Interval(U.lo + t, U.hi - t)


def input_preimage(K, U: Interval) -> Polytope:
    """``{x : -K x in U}`` for a single-input gain ``K``."""
    K = np.asarray(K, dtype=float).reshape(1, -1)
    rows, offs = [], []
    if np.isfinite(U.hi):
        rows.append(-K[0])
        offs.append(U.hi)
    if np.isfinite(U.lo):
        rows.append(K[0])
        offs.append(-U.lo)
    return Polytope(np.reshape(rows, (len(rows), K.shape[1])), np.asarray(offs))


def _invariant_iteration(A_cl, omega0: Polytope, shrink, tol, max_iter):
    """Pre-set iteration ``O_{k+1} = O_k & {x : A_cl x + W in O_k}``.

    Only the rows added at the previous step are propagated: when a row is
    implied by ``O_k``, its image under the pre-set map is implied by
    ``O_{k+1}``, so redundant rows never need to be revisited.
    """
    omega = omega0.remove_redundant(tol)
    if omega.n_rows and omega.is_empty:
        raise SynthesisError("constraint set is empty")
    frontier_L, frontier_b = omega.Lambda, omega.b
    for k in range(max_iter):
        if len(frontier_b) == 0:
            logger.debug("invariant set converged after %d iterations, %d rows", k, omega.n_rows)
            return omega.remove_redundant(tol), k
        new_L = frontier_L @ A_cl
        new_b = frontier_b - shrink(frontier_L)
        norms = np.linalg.norm(new_L, axis=1)
        new_L = new_L / norms[:, None]
        new_b = new_b / norms
        keep = []
        for i in range(len(new_b)):
            s = _support_lp(new_L[i], omega.Lambda, omega.b)
            if s == -np.inf:
                raise SynthesisError("invariant set iteration produced an empty set")
            if s > new_b[i] + tol:
                keep.append(i)
        frontier_L, frontier_b = new_L[keep], new_b[keep]
        if keep:
            omega = Polytope(np.vstack([omega.Lambda, frontier_L]),
                             np.concatenate([omega.b, frontier_b]))
            if omega.is_empty:
                raise SynthesisError(f"invariant set became empty at iteration {k + 1}")
    raise SynthesisError(
        f"invariant set iteration did not converge in {max_iter} iterations "
        f"(spectral radius {spectral_radius(A_cl):.6f})"
    )


def max_positively_invariant(A_cl, X: Polytope, U: Interval | None = None, K=None,
                             *, tol: float = SUPPORT_TOL, max_iter: int = MAX_INVARIANT_ITER,
                             return_iterations: bool = False):
    """Maximal positively invariant set of ``x+ = A_cl x`` inside ``X`` and ``-K x in U``.

    Raises
    ------
    SynthesisError
        If ``A_cl`` is not Schur stable or the iteration does not converge.
    """
    return max_robust_positively_invariant(A_cl, X, U, K, None, 0.0, tol=tol, max_iter=max_iter,
                                           return_iterations=return_iterations)


def max_robust_positively_invariant(A_cl, X: Polytope, U: Interval | None, K, B_w, w_max: float,
                                    *, tol: float = SUPPORT_TOL, max_iter: int = MAX_INVARIANT_ITER,
                                    return_iterations: bool = False):
    """Maximal robust positively invariant set for ``x+ = A_cl x + B_w w, |w| <= w_max``.

    The disturbance set is the segment ``{B_w w : |w| <= w_max}``; its support
    in direction ``a`` is ``w_max |a^T B_w|``.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    if spectral_radius(A_cl) >= 1.0:
        raise SynthesisError(f"A_cl is not Schur stable (spectral radius {spectral_radius(A_cl):.6f})")
    omega0 = X
    if U is not None and K is not None:
        omega0 = X.intersect(input_preimage(K, U))
    if B_w is None or w_max == 0:
        def shrink(L):
            return np.zeros(len(L))
    else:
        Bw = np.asarray(B_w, dtype=float).reshape(-1)

        def shrink(L):
            return w_max * np.abs(L @ Bw)
    if omega0.n_rows == 0:
        return (omega0, 0) if return_iterations else omega0
    omega, k = _invariant_iteration(A_cl, omega0, shrink, tol, max_iter)
    return (omega, k) if return_iterations else omega


def max_ellipsoid_level_in_polytope(P, X: Polytope) -> float:
    """Largest ``alpha`` with ``{x : x^T P x <= alpha}`` contained in ``X``.

    Returns ``inf`` for an unconstrained ``X``.

    Raises
    ------
    ValueError
        If the origin is not strictly inside ``X``.
    """
    P = as_symmetric(P)
    if X.n_rows == 0:
        return np.inf
    if np.any(X.b <= 0):
        raise ValueError("the origin must lie strictly inside the polytope")
    q = np.einsum("ij,jk,ik->i", X.Lambda, np.linalg.inv(P), X.Lambda)
    return float(np.min(X.b**2 / q))


def ellipsoid_touch_point(P, a, level: float) -> np.ndarray:
    """Maximizer of ``a^T x`` over ``x^T P x <= level``."""
    P = as_symmetric(P)
    a = np.asarray(a, dtype=float)
    Pinv_a = np.linalg.solve(P, a)
    return np.sqrt(level / (a @ Pinv_a)) * Pinv_a

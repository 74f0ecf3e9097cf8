"""Certified invariant sublevel set of the nonlinear LQR closed loop.

With ``V(x) = x^T P x`` and ``A_cl^T P A_cl - P = -Q`` the closed loop
``x+ = A_cl x + g(x)`` decreases ``V`` wherever ``||g(x)|| < gamma ||x||`` for
``gamma`` below :func:`gamma_bound`. A radius ``rho`` on which the remainder
bound holds is found by sampling, and the largest sublevel set inside that
ball, ``{x : V(x) <= lambda_min(P) rho^2}``, is invariant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import defaults
from .control_math import as_symmetric, eig_sym, solve_discrete_lyapunov, spectral_norm
from .exceptions import CertificationError
from .geometry import (
    Ellipsoid,
    Polytope,
    input_preimage,
    max_ellipsoid_level_in_polytope,
    pontryagin_diff_ellipsoid,
    pontryagin_diff_interval,
)
from .model import TwipParams, step_nonlinear


def gamma_bound(P, A_cl, Q) -> float:
    """Largest admissible nonlinear gain for the Lyapunov decrease argument.

    ``(-||P A_cl|| + sqrt(||P A_cl||^2 + lambda_min(Q) lambda_max(P))) / lambda_max(P)``
    with spectral norms.
    """
    P = as_symmetric(P)
    Q = as_symmetric(Q)
    n_pa = spectral_norm(P @ np.asarray(A_cl, dtype=float))
    lam_max_P = eig_sym(P)[0][-1]
    lam_min_Q = eig_sym(Q)[0][0]
    return float((-n_pa + np.sqrt(n_pa**2 + lam_min_Q * lam_max_P)) / lam_max_P)


def nonlinear_remainder(X, K, A_cl, params: TwipParams | None = None, Ts: float = defaults.TS,
                        u_max: float = defaults.U_MAX, substeps: int = defaults.SUBSTEPS):
    """``g(x) = f_d(x, sat(-K x)) - A_cl x`` for one state or a batch of states.

    ``f_d`` is one RK4 step of the nonlinear dynamics, so ``g`` is exactly the
    part of the sampled closed loop not captured by its linearization. That
    includes a small linear term: the linear part of the RK4 map differs from
    the exact zero-order-hold matrix by ``O(Ts**5 / substeps**4)``.
    """
    X = np.asarray(X, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    u = np.clip(-(X @ K[0]), -u_max, u_max)
    return step_nonlinear(X, u, params, Ts, substeps) - X @ np.asarray(A_cl, dtype=float).T


def _unit_directions(rng, n, dim):
    d = rng.standard_normal((n, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _ratio_samples(rng, dim, n_sphere, n_ball):
    """Unit-scale probe points: sphere shells at 1, 1/2, 1/4, 1/8 and a uniform ball."""
    per_shell = max(1, n_sphere // 4)
    shells = [s * _unit_directions(rng, per_shell, dim) for s in (1.0, 0.5, 0.25, 0.125)]
    radii = rng.uniform(size=(n_ball, 1)) ** (1.0 / dim)
    ball = radii * _unit_directions(rng, n_ball, dim)
    return np.vstack(shells + [ball])


def max_remainder_ratio(remainder, points) -> float:
    """``max ||g(x)|| / ||x||`` over ``points`` (rows with ``x = 0`` are skipped)."""
    points = np.asarray(points, dtype=float)
    norms = np.linalg.norm(points, axis=1)
    keep = norms > 0
    g = remainder(points[keep])
    ratios = np.linalg.norm(g, axis=1) / norms[keep]
    if not np.all(np.isfinite(ratios)):
        return np.inf
    return float(np.max(ratios, initial=0.0))


def find_rho(remainder, gamma: float, K, u_max: float, *, safety: float = defaults.RHO_SAFETY,
             r_max: float = 1.0, n_sphere: int = 100_000, n_ball: int = 10_000,
             n_bisect: int = 20, random_state=0):
    """Largest radius on which the sampled remainder ratio stays below ``safety * gamma``.

    A radius ``r`` is accepted when ``max ||g(x)||/||x|| <= safety * gamma`` over
    ``n_sphere`` points on spheres of radius ``r, r/2, r/4, r/8`` and ``n_ball``
    points uniform in the ball of radius ``r``, and ``||K|| r <= u_max``. The
    probe points are drawn once and rescaled, so acceptance is a deterministic
    function of ``r``.

    Parameters
    ----------
    remainder : callable
        Maps a ``(k, n)`` batch of states to ``(k, n)`` remainders.
    gamma : float
    K : (1, n) array_like
        Feedback gain, for the saturation condition.
    u_max : float
    safety : float
        Factor in ``(0, 1)`` applied to ``gamma``.
    r_max : float
        Upper end of the search interval.
    n_sphere, n_ball, n_bisect : int
    random_state : int or numpy Generator

    Returns
    -------
    rho : float
    max_ratio : float
        Largest sampled ratio at the returned radius.

    Raises
    ------
    CertificationError
        If no radius was accepted.
    """
    if not 0 < safety < 1:
        raise ValueError(f"safety must lie in (0, 1), got {safety}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    rng = np.random.default_rng(random_state)
    unit = _ratio_samples(rng, K.shape[1], n_sphere, n_ball)
    k_norm = spectral_norm(K)
    limit = safety * gamma

    def accepted(r):
        if k_norm * r > u_max:
            return False, np.inf
        ratio = max_remainder_ratio(remainder, r * unit)
        return ratio <= limit, ratio

    ok, ratio = accepted(r_max)
    if ok:
        return float(r_max), ratio
    lo, hi, best_ratio = 0.0, float(r_max), None
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        ok, ratio = accepted(mid)
        if ok:
            lo, best_ratio = mid, ratio
        else:
            hi = mid
    if lo == 0.0:
        raise CertificationError(
            f"no radius accepted down to {hi:.3e}: sampled ratio {ratio:.3e} exceeds {limit:.3e}")
    return lo, best_ratio


@dataclass(frozen=True)
class CertifiedInvariantSet:
    """``{x : x^T P x <= level}``, invariant under the nonlinear saturated LQR loop.

    Attributes
    ----------
    P : (n, n) ndarray
        Lyapunov matrix for ``Q = I``.
    gamma : float
        Nonlinear gain used in the certificate.
    gamma_bound : float
        Upper limit on ``gamma`` from the decrease argument.
    rho : float
        Radius on which ``||g(x)|| < gamma ||x||`` was verified.
    level : float
        ``lambda_min(P) * rho**2``.
    K : (1, n) ndarray
        LQR gain the set certifies.
    max_ratio : float
        Largest sampled ``||g(x)|| / ||x||`` at ``rho``.
    n_samples : int
        Probe points per radius in the search.
    """

    P: np.ndarray
    gamma: float
    gamma_bound: float
    rho: float
    level: float
    K: np.ndarray
    max_ratio: float
    n_samples: int
    lyapunov_norm: str = "spectral"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "P", as_symmetric(self.P))
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        if not self.level > 0:
            raise ValueError(f"level must be positive, got {self.level}")
        if not self.gamma < self.gamma_bound:
            raise ValueError(f"gamma {self.gamma} must be below the bound {self.gamma_bound}")

    @property
    def lambda_min(self) -> float:
        return float(eig_sym(self.P)[0][0])

    @property
    def lambda_max(self) -> float:
        return float(eig_sym(self.P)[0][-1])

    @property
    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(self.P, self.level)

    def value(self, X):
        """Lyapunov function ``x^T P x`` (batched over leading axes)."""
        X = np.asarray(X, dtype=float)
        return np.einsum("...i,ij,...j->...", X, self.P, X)

    def contains(self, X):
        with np.errstate(invalid="ignore", over="ignore"):
            v = self.value(X)
        return np.isfinite(v) & (v <= self.level)

    def max_input(self) -> float:
        """``max |K x|`` over the set, ``sqrt(level * K P^-1 K^T)``."""
        k = self.K[0]
        return float(np.sqrt(self.level * k @ np.linalg.solve(self.P, k)))

    def sample(self, n: int, random_state=None, boundary: bool = False) -> np.ndarray:
        """Points uniform in the set, or on its boundary with ``boundary=True``."""
        rng = np.random.default_rng(random_state)
        dim = self.P.shape[0]
        d = _unit_directions(rng, n, dim)
        if not boundary:
            d *= rng.uniform(size=(n, 1)) ** (1.0 / dim)
        L = np.linalg.cholesky(self.P)
        # x = L^{-T} y has x^T P x = ||y||^2
        return np.linalg.solve(L.T, (np.sqrt(self.level) * d).T).T

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(), "gamma": self.gamma, "gamma_bound": self.gamma_bound,
            "rho": self.rho, "level": self.level, "K": self.K.tolist(),
            "max_ratio": self.max_ratio, "n_samples": self.n_samples,
            "lambda_min_P": self.lambda_min, "lambda_max_P": self.lambda_max,
            "lyapunov_norm": self.lyapunov_norm, "max_input": self.max_input(),
            **self.extra,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CertifiedInvariantSet":
        keys = ("P", "gamma", "gamma_bound", "rho", "level", "K", "max_ratio", "n_samples")
        return cls(**{k: (np.asarray(data[k]) if k in ("P", "K") else data[k]) for k in keys},
                   lyapunov_norm=data.get("lyapunov_norm", "spectral"))


def build_invariant_set(A_cl, K, *, params: TwipParams | None = None, Ts: float = defaults.TS,
                        substeps: int = defaults.SUBSTEPS, u_max: float = defaults.U_MAX, Q=None,
                        margin: float = defaults.GAMMA_MARGIN,
                        safety: float = defaults.RHO_SAFETY, r_max: float = 1.0,
                        n_sphere: int = 100_000, n_ball: int = 10_000, n_bisect: int = 20,
                        random_state=0) -> CertifiedInvariantSet:
    """Certify the sublevel set for the saturated LQR loop ``u = sat(-K x)``.

    ``P`` solves the Lyapunov equation for ``A_cl`` with ``Q`` (identity by
    default), ``gamma = margin * gamma_bound`` and ``rho`` comes from
    :func:`find_rho` on the one-step remainder of the nonlinear model.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    n = A_cl.shape[0]
    Q = np.eye(n) if Q is None else as_symmetric(Q)
    if not 0 < margin < 1:
        raise ValueError(f"margin must lie in (0, 1), got {margin}")
    P = solve_discrete_lyapunov(A_cl, Q)
    bound = gamma_bound(P, A_cl, Q)
    gamma = margin * bound

    def remainder(X):
        return nonlinear_remainder(X, K, A_cl, params, Ts, u_max, substeps)

    rho, ratio = find_rho(remainder, gamma, K, u_max, safety=safety, r_max=r_max,
                          n_sphere=n_sphere, n_ball=n_ball, n_bisect=n_bisect,
                          random_state=random_state)
    level = float(eig_sym(P)[0][0] * rho**2)
    return CertifiedInvariantSet(P, gamma, bound, rho, level, K, ratio, n_sphere + n_ball)


def revalidate(cset: CertifiedInvariantSet, A_cl, *, params: TwipParams | None = None,
               Ts: float = defaults.TS, substeps: int = defaults.SUBSTEPS,
               u_max: float = defaults.U_MAX, n: int = 1_000_000,
               random_state=1, chunk: int = 200_000) -> dict:
    """Fresh sampling pass of the remainder bound inside the ball of radius ``rho``.

    Returns the number of violations of ``||g(x)|| < gamma ||x||`` and the
    largest ratio seen.
    """
    rng = np.random.default_rng(random_state)
    dim = cset.P.shape[0]
    violations, worst = 0, 0.0
    done = 0
    while done < n:
        k = min(chunk, n - done)
        X = cset.rho * _unit_directions(rng, k, dim) * rng.uniform(size=(k, 1)) ** (1.0 / dim)
        norms = np.linalg.norm(X, axis=1)
        g = nonlinear_remainder(X, cset.K, A_cl, params, Ts, u_max, substeps)
        ratio = np.linalg.norm(g, axis=1) / norms
        violations += int(np.sum(~(ratio < cset.gamma)))
        worst = max(worst, float(np.max(ratio)))
        done += k
    return {"samples": n, "violations": violations, "max_ratio": worst}


def decrease_violations(cset: CertifiedInvariantSet, *, params: TwipParams | None = None,
                        Ts: float = defaults.TS, substeps: int = defaults.SUBSTEPS,
                        u_max: float = defaults.U_MAX, n: int = 100_000,
                        random_state=2, exclude_radius: float = 1e-9) -> int:
    """Count sampled states in the set with ``V(x+) >= V(x)`` under the nonlinear loop."""
    X = cset.sample(n, random_state)
    X = X[np.linalg.norm(X, axis=1) > exclude_radius]
    u = np.clip(-(X @ cset.K[0]), -u_max, u_max)
    X_next = step_nonlinear(X, u, params, Ts, substeps)
    return int(np.sum(~(cset.value(X_next) < cset.value(X))))


@dataclass(frozen=True)
class AdmissibilityReport:
    """Result of fitting the certified set inside a policy's constraints.

    Attributes
    ----------
    controller : str
    alpha_star : float
        Largest ``alpha`` with ``{x^T P x <= alpha}`` inside the constraint
        polytope (``inf`` when unconstrained).
    level : float
        Level of the certified set.
    n_rows : int
        Rows of the constraint polytope.
    """

    controller: str
    alpha_star: float
    level: float
    n_rows: int

    @property
    def admissible(self) -> bool:
        return bool(self.alpha_star >= self.level)

    def to_dict(self) -> dict:
        return {"controller": self.controller,
                "alpha_star": None if np.isinf(self.alpha_star) else self.alpha_star,
                "alpha_star_unbounded": bool(np.isinf(self.alpha_star)),
                "level": self.level, "n_rows": self.n_rows, "admissible": self.admissible}


def admissibility_polytope(policy, K) -> Polytope:
    """Constraints a certified state must satisfy for ``policy`` to act as the LQR there.

    State set, preimage of the input set under the LQR gain and the terminal
    set; for a tube policy the state and input sets are those tightened for
    the final prediction step. Policies without constraints give the
    universe.
    """
    from .controllers import CTMPCController, MPCController

    n = np.atleast_2d(K).shape[1]
    if isinstance(policy, CTMPCController):
        F_N = Ellipsoid(policy.tube_.P_tube, policy.deltas_[-1] ** 2)
        X = pontryagin_diff_ellipsoid(policy.state_set_, F_N)
        U = pontryagin_diff_interval(policy.input_set_, policy.tube_.K_tube, F_N)
    elif isinstance(policy, MPCController):
        X, U = policy.state_set_, policy.input_set_
    else:
        return Polytope.universe(n)
    return X.intersect(input_preimage(K, U)).intersect(policy.terminal_set_)


def check_admissibility(cset: CertifiedInvariantSet, policy, name: str | None = None) -> AdmissibilityReport:
    """Compare ``alpha_star`` of the policy's constraint polytope with the set level."""
    check_is_fitted(policy)
    X = admissibility_polytope(policy, cset.K)
    alpha = max_ellipsoid_level_in_polytope(cset.P, X)
    return AdmissibilityReport(name or type(policy).__name__, float(alpha), cset.level, X.n_rows)


class InvariantSetCertifier(BaseEstimator):
    """Estimator wrapper around :func:`build_invariant_set`.

    ``fit`` takes a fitted :class:`~twiproa.controllers.LQRController`;
    ``predict`` returns set membership and ``decision_function`` the margin
    ``level - V(x)``.

    Parameters
    ----------
    params : TwipParams, optional
        Nonlinear model parameters.
    substeps : int
        RK4 substeps per sampling interval.
    margin, safety : float
        Factors applied to the gain bound and to ``gamma`` in the search.
    r_max : float
    n_sphere, n_ball, n_bisect : int
    random_state : int

    Attributes
    ----------
    set_ : CertifiedInvariantSet
    """

    def __init__(self, params=None, substeps=defaults.SUBSTEPS, margin=defaults.GAMMA_MARGIN,
                 safety=defaults.RHO_SAFETY, r_max=1.0, n_sphere=100_000, n_ball=10_000,
                 n_bisect=20, random_state=0):
        self.params = params
        self.substeps = substeps
        self.margin = margin
        self.safety = safety
        self.r_max = r_max
        self.n_sphere = n_sphere
        self.n_ball = n_ball
        self.n_bisect = n_bisect
        self.random_state = random_state

    def fit(self, lqr, y=None):
        check_is_fitted(lqr)
        self.set_ = build_invariant_set(
            lqr.A_cl_, lqr.K_, params=self.params, Ts=lqr.model_.Ts, substeps=self.substeps,
            u_max=lqr.u_max,
            margin=self.margin, safety=self.safety, r_max=self.r_max, n_sphere=self.n_sphere,
            n_ball=self.n_ball, n_bisect=self.n_bisect, random_state=self.random_state)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        return self.set_.level - self.set_.value(X)

    def predict(self, X):
        check_is_fitted(self)
        return self.set_.contains(X)

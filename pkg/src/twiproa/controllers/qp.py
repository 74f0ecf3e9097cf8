"""Dense convex QP solver (primal active-set) with warm starts.

Solves::

    minimize    0.5 x^T H x + f^T x
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                lb <= x <= ub

``H`` must be symmetric positive definite. Simple bounds are handled by
fixing variables rather than as general rows. Variables that only have a
diagonal Hessian entry and appear in a single inequality row ("private
slacks") are eliminated from the KKT systems while their row is active, so
the linear algebra scales with the number of coupled variables rather than
with the number of softened constraints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

FREE, LOWER, UPPER = 0, 1, 2


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H must be square, got {self.H.shape}")
        self.f = np.asarray(self.f, dtype=float).reshape(n)
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "equality")
        self.A_in, self.b_in = _rows(self.A_in, self.b_in, n, "inequality")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n)
        if np.any(self.lb > self.ub):
            raise ValueError("lower bounds exceed upper bounds")
        self._structure = None

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def structure(self) -> "_Structure":
        """Private-slack structure of ``H`` and ``A_in`` (cached; H and A_in are assumed fixed)."""
        if self._structure is None:
            self._structure = _Structure.detect(self)
        return self._structure


def _rows(A, b, n, what):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise ValueError(f"{what} constraints have inconsistent shapes {A.shape}, {b.shape}")
    return A, b


@dataclass
class _Structure:
    is_priv: np.ndarray      # (n,) bool
    priv_row: np.ndarray     # (n,) row index or -1
    priv_coef: np.ndarray    # (n,)
    row_priv: np.ndarray     # (m_in,) private variable index or -1
    core: np.ndarray         # indices of non-private variables
    diag: np.ndarray         # diagonal of H

    @classmethod
    def detect(cls, p: QpProblem):
        n, m = p.n, len(p.b_in)
        H = p.H
        offdiag = np.abs(H - np.diag(np.diag(H))).sum(axis=0) > 0
        in_eq = np.abs(p.A_eq).sum(axis=0) > 0 if len(p.b_eq) else np.zeros(n, dtype=bool)
        nz = p.A_in != 0
        count = nz.sum(axis=0)
        cand = (~offdiag) & (~in_eq) & (count == 1) & (np.diag(H) > 0)
        is_priv = np.zeros(n, dtype=bool)
        priv_row = np.full(n, -1)
        priv_coef = np.zeros(n)
        row_priv = np.full(m, -1)
        for j in np.flatnonzero(cand):
            i = int(np.flatnonzero(nz[:, j])[0])
            if row_priv[i] >= 0:
                continue
            is_priv[j] = True
            priv_row[j] = i
            priv_coef[j] = p.A_in[i, j]
            row_priv[i] = j
        return cls(is_priv, priv_row, priv_coef, row_priv, np.flatnonzero(~is_priv), np.diag(H).copy())


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_lb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    working_set: tuple = ((), None)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def active_in(self) -> np.ndarray:
        return np.asarray(sorted(self.working_set[0]), dtype=int)


def kkt_residuals(p: QpProblem, s: QpSolution) -> dict:
    """Stationarity, primal feasibility, complementarity and dual-sign residuals (inf-norms)."""
    x = s.x
    grad = p.H @ x + p.f + p.A_eq.T @ s.y_eq + p.A_in.T @ s.y_in - s.z_lb + s.z_ub
    r_in = p.A_in @ x - p.b_in
    feas = max(
        np.max(np.abs(p.A_eq @ x - p.b_eq), initial=0.0),
        np.max(r_in, initial=0.0),
        np.max(p.lb - x, initial=0.0),
        np.max(x - p.ub, initial=0.0),
    )
    with np.errstate(invalid="ignore"):
        comp = max(
            np.max(np.abs(s.y_in * r_in), initial=0.0),
            np.max(np.abs(np.where(s.z_lb > 0, s.z_lb * (x - p.lb), 0.0)), initial=0.0),
            np.max(np.abs(np.where(s.z_ub > 0, s.z_ub * (p.ub - x), 0.0)), initial=0.0),
        )
    dual = min(np.min(s.y_in, initial=0.0), np.min(s.z_lb, initial=0.0), np.min(s.z_ub, initial=0.0))
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal": float(feas),
        "complementarity": float(comp),
        "dual": float(-dual),
    }


def _phase1(p: QpProblem):
    """A feasible point from an LP, or None if the constraints are infeasible."""
    bounds = list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None)))
    res = linprog(
        np.zeros(p.n),
        A_ub=p.A_in if len(p.b_in) else None, b_ub=p.b_in if len(p.b_in) else None,
        A_eq=p.A_eq if len(p.b_eq) else None, b_eq=p.b_eq if len(p.b_eq) else None,
        bounds=bounds, method="highs",
    )
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    return res.x


def _max_violation(p: QpProblem, x):
    v = max(np.max(p.lb - x, initial=0.0), np.max(x - p.ub, initial=0.0))
    if len(p.b_eq):
        v = max(v, np.max(np.abs(p.A_eq @ x - p.b_eq)))
    if len(p.b_in):
        v = max(v, np.max(p.A_in @ x - p.b_in))
    return v


class _ActiveSet:
    """Working set, iterate and the reduced KKT solves of one QP run."""

    def __init__(self, p: QpProblem, x, bstate, W, tol):
        self.p = p
        self.st = p.structure()
        self.x = x
        self.bstate = bstate
        self.W = list(W)
        self.in_W = np.zeros(len(p.b_in), dtype=bool)
        self.in_W[self.W] = True
        self.tol = tol

    def step(self, target_rows: bool):
        """Newton step on the working set.

        With ``target_rows`` the step also removes the residual of the
        working-set rows (used when starting from a point that does not
        satisfy them).

        Returns ``(p, lam_eq, lam_W)`` with ``p`` a full-length step.
        """
        p, st, x = self.p, self.st, self.x
        g = p.H @ x + p.f
        free = self.bstate == FREE
        W = np.asarray(self.W, dtype=int)
        m_eq = len(p.b_eq)
        # split working rows into eliminated (free private slack) and hard rows
        if len(W):
            s_of = st.row_priv[W]
            elim = (s_of >= 0)
            elim[elim] = free[s_of[elim]]
        else:
            s_of = np.zeros(0, dtype=int)
            elim = np.zeros(0, dtype=bool)
        We, Wh = W[elim], W[~elim]
        se = s_of[elim]
        Cf = st.core[free[st.core]]
        nC = len(Cf)

        M = p.H[np.ix_(Cf, Cf)].copy()
        r = -g[Cf]
        if target_rows:
            res_e = p.b_in[We] - p.A_in[We] @ x
            res_h = p.b_in[Wh] - p.A_in[Wh] @ x
            res_eq = p.b_eq - p.A_eq @ x
        else:
            res_e = np.zeros(len(We))
            res_h = np.zeros(len(Wh))
            res_eq = np.zeros(m_eq)
        if len(We):
            Ae = p.A_in[np.ix_(We, Cf)]
            c = st.priv_coef[se]
            h = st.diag[se]
            w = h / c**2
            M += (Ae.T * w) @ Ae
            r += Ae.T @ (g[se] / c + w * res_e)
        A_h = np.vstack([p.A_eq[:, Cf], p.A_in[np.ix_(Wh, Cf)]]) if m_eq else p.A_in[np.ix_(Wh, Cf)]
        nh = A_h.shape[0]
        K = np.empty((nC + nh, nC + nh))
        K[:nC, :nC] = M
        K[:nC, nC:] = A_h.T
        K[nC:, :nC] = A_h
        K[nC:, nC:] = 0.0
        rhs = np.concatenate([r, res_eq, res_h])
        # symmetric equilibration: slack weights make M and A_h differ by many decades
        d = np.ones(nC + nh)
        dm = np.diag(M)
        d[:nC] = 1.0 / np.sqrt(np.where(dm > 0, dm, 1.0))
        if nh:
            rn = np.linalg.norm(A_h * d[:nC], axis=1)
            d[nC:] = 1.0 / np.where(rn > 0, rn, 1.0)
        Ks = K * d[:, None] * d[None, :]
        try:
            sol = d * np.linalg.solve(Ks, d * rhs)
        except np.linalg.LinAlgError:
            sol = d * np.linalg.lstsq(Ks, d * rhs, rcond=None)[0]
        pC = sol[:nC]
        lam_h = sol[nC:]

        step = np.zeros(p.n)
        step[Cf] = pC
        lam_W = np.empty(len(W))
        lam_W[~elim] = lam_h[m_eq:]
        if len(We):
            aTp = Ae @ pC
            ps = (res_e - aTp) / c
            step[se] = ps
            lam_W[elim] = -(h * ps + g[se]) / c
        # free private slacks whose row is inactive minimize independently
        other = free & st.is_priv
        if len(se):
            other[se] = False
        idx = np.flatnonzero(other)
        if len(idx):
            step[idx] = -g[idx] / st.diag[idx]
        return step, lam_h[:m_eq], lam_W

    def multipliers_ok(self, lam_eq, lam_W):
        """Return ``(kind, index)`` of the most negative multiplier, or None if optimal."""
        p = self.p
        g = p.H @ self.x + p.f
        r_bound = g + p.A_eq.T @ lam_eq
        if len(self.W):
            r_bound = r_bound + p.A_in[self.W].T @ lam_W
        worst = -self.tol * max(1.0, np.max(np.abs(g), initial=0.0))
        choice = None
        if len(lam_W):
            j = int(np.argmin(lam_W))
            if lam_W[j] < worst:
                worst, choice = lam_W[j], ("row", j)
        low = np.flatnonzero(self.bstate == LOWER)
        if len(low):
            j = int(np.argmin(r_bound[low]))
            if r_bound[low[j]] < worst:
                worst, choice = r_bound[low[j]], ("bound", int(low[j]))
        up = np.flatnonzero(self.bstate == UPPER)
        if len(up):
            j = int(np.argmin(-r_bound[up]))
            if -r_bound[up[j]] < worst:
                worst, choice = -r_bound[up[j]], ("bound", int(up[j]))
        return choice, r_bound

    def solution(self, status, it, lam_eq, lam_W, r_bound):
        p = self.p
        n, m_in = p.n, len(p.b_in)
        y_in = np.zeros(m_in)
        z_lb = np.zeros(n)
        z_ub = np.zeros(n)
        y_eq = np.zeros(len(p.b_eq))
        if status == OPTIMAL:
            y_eq = lam_eq
            if self.W:
                y_in[self.W] = lam_W
            low = self.bstate == LOWER
            up = self.bstate == UPPER
            z_lb[low] = r_bound[low]
            z_ub[up] = -r_bound[up]
        ws = (tuple(self.W), self.bstate.copy())
        return QpSolution(self.x, p.objective(self.x), status, it, y_eq, y_in, z_lb, z_ub, ws)


def solve_qp(p: QpProblem, warm_start=None, *, working_set=None, tol: float = 1e-9,
             max_iter: int | None = None) -> QpSolution:
    """Solve a convex QP by the primal active-set method.

    Parameters
    ----------
    p : QpProblem
    warm_start : array_like, optional
        Initial primal guess, used as the starting point when feasible
        (after projection onto the bounds); otherwise a phase-1 LP is solved.
    working_set : tuple, optional
        ``(rows, bound_states)`` from a previous :class:`QpSolution`. The
        equality-constrained minimizer on this working set is tried first and
        accepted directly when it is feasible and dual feasible.
    tol : float
        Feasibility and optimality tolerance.
    max_iter : int, optional
        Iteration cap; defaults to ``10 * (n + m_in) + 50``.

    Returns
    -------
    QpSolution
        ``status`` is ``"optimal"``, ``"infeasible"`` or ``"max_iter"``. On
        ``"max_iter"`` the last (feasible) iterate is returned.
    """
    n = p.n
    m_in = len(p.b_in)
    if max_iter is None:
        max_iter = 10 * (n + m_in) + 50

    x = None
    if warm_start is not None:
        x0 = np.clip(np.asarray(warm_start, dtype=float).reshape(n), p.lb, p.ub)
        if _max_violation(p, x0) <= tol:
            x = x0
    it = 0

    if working_set is not None and working_set[1] is not None:
        rows, bst = working_set
        bst = np.asarray(bst, dtype=np.int8).copy()
        base = x if x is not None else np.zeros(n)
        base = base.copy()
        base[bst == LOWER] = p.lb[bst == LOWER]
        base[bst == UPPER] = p.ub[bst == UPPER]
        if np.all(np.isfinite(base)):
            trial = _ActiveSet(p, base, bst, rows, tol)
            step, lam_eq, lam_W = trial.step(target_rows=True)
            it += 1
            trial.x = base + step
            if _max_violation(p, trial.x) <= tol:
                trial.x = np.clip(trial.x, p.lb, p.ub)
                choice, r_bound = trial.multipliers_ok(lam_eq, lam_W)
                if choice is None:
                    return trial.solution(OPTIMAL, it, lam_eq, lam_W, r_bound)
                x = trial.x
                return _iterate(trial, max_iter, it, tol, drop=choice)

    if x is None:
        x = _phase1(p)
        if x is None:
            return QpSolution(np.full(n, np.nan), np.nan, INFEASIBLE, it)
        x = np.clip(x, p.lb, p.ub)

    bstate = np.full(n, FREE, dtype=np.int8)
    bstate[np.abs(x - p.lb) <= tol] = LOWER
    bstate[(np.abs(x - p.ub) <= tol) & (bstate == FREE)] = UPPER
    x[bstate == LOWER] = p.lb[bstate == LOWER]
    x[bstate == UPPER] = p.ub[bstate == UPPER]
    W = _initial_working_set(p, x, bstate, tol)
    return _iterate(_ActiveSet(p, x, bstate, W, tol), max_iter, it, tol)


def _iterate(S: _ActiveSet, max_iter, it, tol, drop=None):
    p = S.p
    m_in = len(p.b_in)
    if drop is not None:
        _drop(S, drop)
    lam_eq = lam_W = r_bound = None
    status = MAX_ITER
    while it < max_iter:
        it += 1
        step, lam_eq, lam_W = S.step(target_rows=False)
        x = S.x
        free = np.flatnonzero(S.bstate == FREE)
        pF = step[free]
        scale = max(1.0, np.max(np.abs(x[free]), initial=0.0))
        if np.max(np.abs(pF), initial=0.0) > 1e-12 * scale:
            alpha, block = 1.0, None
            if m_in:
                Ap = p.A_in[:, free] @ pF
                cand = (~S.in_W) & (Ap > 1e-14)
                if np.any(cand):
                    idx = np.flatnonzero(cand)
                    ratios = (p.b_in[idx] - p.A_in[idx] @ x) / Ap[idx]
                    j = int(np.argmin(ratios))
                    if ratios[j] < alpha:
                        alpha, block = max(ratios[j], 0.0), ("row", int(idx[j]))
            neg = pF < 0
            if np.any(neg):
                fi = free[neg]
                ratios = (p.lb[fi] - x[fi]) / pF[neg]
                j = int(np.argmin(ratios))
                if ratios[j] < alpha:
                    alpha, block = max(ratios[j], 0.0), ("lower", int(fi[j]))
            pos = pF > 0
            if np.any(pos):
                fi = free[pos]
                ratios = (p.ub[fi] - x[fi]) / pF[pos]
                j = int(np.argmin(ratios))
                if ratios[j] < alpha:
                    alpha, block = max(ratios[j], 0.0), ("upper", int(fi[j]))
            x[free] += alpha * pF
            if block is not None:
                kind, j = block
                if kind == "row":
                    S.W.append(j)
                    S.in_W[j] = True
                elif kind == "lower":
                    S.bstate[j] = LOWER
                    x[j] = p.lb[j]
                else:
                    S.bstate[j] = UPPER
                    x[j] = p.ub[j]
                continue
            # full step: x now minimizes on the working set, lam are its multipliers
        choice, r_bound = S.multipliers_ok(lam_eq, lam_W)
        if choice is None:
            status = OPTIMAL
            break
        _drop(S, choice)
    if status != OPTIMAL:
        lam_eq = np.zeros(len(p.b_eq))
        lam_W = np.zeros(len(S.W))
        r_bound = np.zeros(p.n)
    return S.solution(status, it, lam_eq, lam_W, r_bound)


def _drop(S: _ActiveSet, choice):
    kind, j = choice
    if kind == "row":
        S.in_W[S.W[j]] = False
        del S.W[j]
    else:
        S.bstate[j] = FREE


def _initial_working_set(p: QpProblem, x, bstate, tol):
    """Active inequality rows at ``x``, independent of the equalities and fixed bounds."""
    if len(p.b_in) == 0:
        return []
    active = np.flatnonzero(np.abs(p.A_in @ x - p.b_in) <= tol)
    if len(active) == 0:
        return []
    F = np.flatnonzero(bstate == FREE)
    if len(F) == 0:
        return []
    M = np.vstack([p.A_eq[:, F], p.A_in[np.ix_(active, F)]])
    n_eq = len(p.b_eq)
    # greedy independent subset in row order, equalities first
    _, R, piv = scipy.linalg.qr(M.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > 1e-9 * max(1.0, d[0] if len(d) else 1.0)))
    chosen = sorted(int(k) for k in piv[:rank] if k >= n_eq)
    return [int(active[k - n_eq]) for k in chosen]

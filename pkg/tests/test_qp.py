
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twiproa.controllers.qp import QpProblem, kkt_residuals, solve_qp

from oracles import random_spd, enumerate_qp


@pytest.mark.parametrize("seed", range(10))
def test_equality_qp_matches_kkt_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = 8, 3
    H = random_spd(rng, n)
    f = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-f, b]))
    res = solve_qp(QpProblem(H, f, A_eq=A, b_eq=b))
    assert res.ok
    np.testing.assert_allclose(res.x, sol[:n], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(res.y_eq, sol[n:], rtol=1e-9, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_inequality_qp_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 5
    H = random_spd(rng, n)
    f = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.1, 1.0, m)  # origin strictly feasible
    x_ref, v_ref = enumerate_qp(H, f, A, b)
    res = solve_qp(QpProblem(H, f, A_in=A, b_in=b))
    assert res.ok
    assert res.objective == pytest.approx(v_ref, rel=1e-8, abs=1e-10)
    np.testing.assert_allclose(res.x, x_ref, atol=1e-7)


@given(st.integers(0, 2**32 - 1))
def test_soft_constrained_qp_matches_enumeration(seed):
    # two core variables, one private slack per softened row, bounds written as rows for the oracle
    rng = np.random.default_rng(seed)
    Hc = random_spd(rng, 2)
    rho = 50.0
    H = np.zeros((4, 4))
    H[:2, :2] = Hc
    H[2:, 2:] = rho * np.eye(2)
    f = np.concatenate([rng.normal(size=2) * 5, [0.0, 0.0]])
    G = rng.normal(size=(2, 2))
    g = rng.uniform(-0.5, 0.5, 2)
    A_in = np.hstack([G, -np.eye(2)])
    lb = np.array([-1.0, -1.0, 0.0, 0.0])
    ub = np.array([1.0, 1.0, np.inf, np.inf])
    p = QpProblem(H, f, A_in=A_in, b_in=g, lb=lb, ub=ub)
    assert p.structure().is_priv.tolist() == [False, False, True, True]
    rows = np.vstack([A_in, np.eye(4)[:2], -np.eye(4)])
    offs = np.concatenate([g, ub[:2], -lb])
    _, v_ref = enumerate_qp(H, f, rows, offs)
    res = solve_qp(p)
    assert res.ok
    assert res.objective == pytest.approx(v_ref, rel=1e-8, abs=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_random_qp_kkt_certificate(seed):
    rng = np.random.default_rng(seed)
    n, m = 10, 15
    p = QpProblem(random_spd(rng, n), rng.normal(size=n) * 5, A_eq=rng.normal(size=(1, n)),
                  b_eq=[0.1], A_in=rng.normal(size=(m, n)), b_in=rng.uniform(0.1, 1, m),
                  lb=-np.ones(n), ub=np.ones(n))
    res = solve_qp(p)
    assert res.ok
    r = kkt_residuals(p, res)
    assert r["stationarity"] <= 1e-8
    assert r["primal"] <= 1e-9
    assert r["complementarity"] <= 1e-8
    assert r["dual"] <= 1e-9


def test_working_set_hint_reproduces_cold_solution():
    rng = np.random.default_rng(3)
    n, m = 6, 10
    p = QpProblem(random_spd(rng, n), rng.normal(size=n) * 5, A_in=rng.normal(size=(m, n)),
                  b_in=rng.uniform(0.1, 1, m), lb=-np.ones(n), ub=np.ones(n))
    cold = solve_qp(p)
    warm = solve_qp(p, cold.x, working_set=cold.working_set)
    assert warm.iterations == 1
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-10)
    # a stale hint from a perturbed problem still ends at the optimum
    p.f = p.f + rng.normal(size=n)
    fresh = solve_qp(p)
    hinted = solve_qp(p, cold.x, working_set=cold.working_set)
    assert hinted.ok
    assert hinted.objective == pytest.approx(fresh.objective, rel=1e-10, abs=1e-12)


def test_infeasible_problem_reported():
    p = QpProblem(np.eye(2), np.zeros(2), A_in=[[1.0, 0.0], [-1.0, 0.0]], b_in=[-1.0, -1.0])
    assert solve_qp(p).status == "infeasible"


def test_max_iter_status():
    rng = np.random.default_rng(0)
    n = 8
    p = QpProblem(random_spd(rng, n), rng.normal(size=n) * 10, lb=-0.1 * np.ones(n),
                  ub=0.1 * np.ones(n))
    res = solve_qp(p, np.zeros(n), max_iter=1)
    assert res.status == "max_iter"
    assert not res.ok


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), A_in=np.ones((2, 3)), b_in=np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), lb=[1.0, 0.0], ub=[0.0, 0.0])

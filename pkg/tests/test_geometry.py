import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twiproa.exceptions import SynthesisError
from twiproa.geometry import (
    Ellipsoid,
    Interval,
    Polytope,
    ellipsoid_touch_point,
    input_preimage,
    max_ellipsoid_level_in_polytope,
    max_positively_invariant,
    max_robust_positively_invariant,
    pontryagin_diff_ellipsoid,
    pontryagin_diff_interval,
)

from oracles import random_instance, sampled_margin


def test_pontryagin_difference_matches_sampled_support_oracle():
    rng = np.random.default_rng(7)
    disagreements = checked = 0
    for _ in range(50):
        X, E = random_instance(rng)
        D = pontryagin_diff_ellipsoid(X, E)
        pts = E.boundary_points(20_000)
        for x in rng.uniform(-2.5, 2.5, size=(200, 2)):
            m = sampled_margin(x, X, pts)
            if abs(m) <= 1e-6:
                continue
            checked += 1
            disagreements += bool(D.contains(x)) != (m <= 0)
    assert checked > 9000
    assert disagreements == 0


def test_pontryagin_interval_closed_form():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    E = Ellipsoid(P, 0.04)
    K = np.array([1.5, -0.7])
    t = np.sqrt(0.04 * K @ np.linalg.solve(P, K))
    U = pontryagin_diff_interval(Interval.symmetric(2.0), K, E)
    assert U.hi == pytest.approx(2.0 - t)
    assert U.lo == pytest.approx(-2.0 + t)
    # every sampled K e is absorbed
    ke = E.boundary_points(1000) @ K
    assert np.all(U.hi + ke <= 2.0 + 1e-12) and np.all(U.lo + ke >= -2.0 - 1e-12)


def test_pontryagin_with_zero_ellipsoid_is_identity():
    X = Polytope.from_box([-1, -2], [1, 2])
    D = pontryagin_diff_ellipsoid(X, Ellipsoid(np.eye(2), 0.0))
    assert D.equals(X)


def test_polytope_normalizes_rows():
    X = Polytope([[2.0, 0.0], [0.0, -4.0], [0.0, 0.0]], [2.0, 4.0, 1.0])
    np.testing.assert_allclose(np.linalg.norm(X.Lambda, axis=1), 1.0)
    np.testing.assert_allclose(X.b, [1.0, 1.0])
    with pytest.raises(ValueError):
        Polytope([[0.0, 0.0]], [-1.0])


def test_box_with_infinite_bounds():
    X = Polytope.from_box([-np.inf, -1], [np.inf, 1])
    assert X.n_rows == 2
    assert X.contains([1e9, 0.5])
    assert X.support([0.0, 1.0]) == pytest.approx(1.0)
    assert X.support([1.0, 0.0]) == np.inf


def test_emptiness_and_redundancy():
    X = Polytope.from_box([-1, -1], [1, 1])
    assert not X.is_empty
    assert X.intersect(Polytope([[1.0, 0.0]], [-2.0])).is_empty
    Y = X.intersect(Polytope([[1.0, 1.0], [1.0, 0.0]], [5.0, 1.0]))
    Z = Y.remove_redundant()
    assert Z.n_rows == 4
    assert Z.equals(X)
    assert Polytope.from_box([-0.5, -0.5], [0.5, 0.5]).is_subset(X)
    assert not X.is_subset(Polytope.from_box([-0.5, -0.5], [0.5, 0.5]))


def test_polytope_dict_round_trip():
    X = Polytope.from_box([-1, -2, -3], [1, 2, 3])
    assert Polytope.from_dict(X.to_dict()).equals(X)


def test_input_preimage():
    K = np.array([2.0, -1.0])
    X = input_preimage(K, Interval.symmetric(1.0))
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2, 2, size=(1000, 2))
    np.testing.assert_array_equal(X.contains(pts, tol=1e-12), np.abs(pts @ K) <= 1.0)


def test_ellipsoid_level_single_row_closed_form():
    P = np.array([[3.0, 0.5], [0.5, 1.0]])
    a = np.array([1.0, 2.0]) / np.sqrt(5)
    X = Polytope(a[None, :], [0.7])
    alpha = max_ellipsoid_level_in_polytope(P, X)
    assert alpha == pytest.approx(0.7**2 / (a @ np.linalg.solve(P, a)))
    x = ellipsoid_touch_point(P, a, alpha)
    assert x @ P @ x == pytest.approx(alpha)
    assert a @ x == pytest.approx(0.7)


def test_ellipsoid_level_edge_cases():
    assert max_ellipsoid_level_in_polytope(np.eye(2), Polytope.universe(2)) == np.inf
    with pytest.raises(ValueError):
        max_ellipsoid_level_in_polytope(np.eye(2), Polytope([[1.0, 0.0]], [0.0]))


@given(st.floats(0.05, 5.0), st.floats(-np.pi, np.pi))
def test_ellipsoid_support_matches_boundary_sampling(c, t):
    E = Ellipsoid(np.array([[2.0, 0.4], [0.4, 0.5]]), c)
    a = np.array([np.cos(t), np.sin(t)])
    sampled = np.max(E.boundary_points(20_000) @ a)
    assert E.support(a) == pytest.approx(sampled, rel=1e-6)


def test_ellipsoid_validation():
    with pytest.raises(ValueError):
        Ellipsoid(np.diag([1.0, -1.0]), 1.0)
    with pytest.raises(ValueError):
        Ellipsoid(np.eye(2), -1.0)


def _check_invariant(O, A_cl, shrink=lambda L: 0.0):
    for a, b in zip(O.Lambda, O.b):
        assert O.support(A_cl.T @ a) + shrink(a) <= b + 1e-7


def test_mpi_is_invariant_and_admissible():
    A = np.array([[1.1, 0.3], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    K = np.array([[0.6, 0.9]])
    A_cl = A - B @ K
    X = Polytope.from_box([-1, -1], [1, 1])
    U = Interval.symmetric(0.5)
    O, k = max_positively_invariant(A_cl, X, U, K, return_iterations=True)
    assert k >= 1
    _check_invariant(O, A_cl)
    assert O.is_subset(X) and O.is_subset(input_preimage(K, U))


def test_rpi_is_robustly_invariant():
    A = np.array([[1.1, 0.3], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    K = np.array([[0.6, 0.9]])
    A_cl = A - B @ K
    X = Polytope.from_box([-1, -1], [1, 1])
    O = max_robust_positively_invariant(A_cl, X, None, None, B, 0.05)
    _check_invariant(O, A_cl, lambda a: 0.05 * abs(a @ B[:, 0]))
    assert O.is_subset(max_positively_invariant(A_cl, X))


def test_invariant_set_rejects_unstable_loop():
    with pytest.raises(SynthesisError):
        max_positively_invariant(np.diag([1.2, 0.5]), Polytope.from_box([-1, -1], [1, 1]))


def test_rpi_empty_when_disturbance_too_large():
    A_cl = np.diag([0.9, 0.5])
    with pytest.raises(SynthesisError):
        max_robust_positively_invariant(A_cl, Polytope.from_box([-1, -1], [1, 1]), None, None,
                                        np.array([1.0, 0.0]), 0.5)


def test_twip_terminal_sets(mpc, ctmpc):
    _check_invariant(mpc.terminal_set_, mpc.A_cl_)
    rpi = ctmpc.rpi_set_
    B = ctmpc.model_.B[:, 0]
    _check_invariant(rpi, ctmpc.A_cl_, lambda a: ctmpc.w_max * abs(a @ B))
    assert ctmpc.terminal_set_.is_subset(rpi)

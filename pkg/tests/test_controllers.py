import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from twiproa.controllers import (
    DIVERGED,
    OK,
    CTMPCController,
    LQRController,
    MPCController,
    contraction_factor,
    synthesize_tube,
)
from twiproa.controllers.mpc import prediction_matrices
from twiproa.exceptions import SynthesisError

small_states = arrays(float, 4, elements=st.floats(-0.02, 0.02))


def test_lqr_saturates(lqr):
    x = np.array([0.0, 0.0, 0.5, 0.0])
    u, status = lqr.compute(x)
    assert status == OK
    assert abs(u) == pytest.approx(2.2)
    assert lqr.unsaturated(x) == pytest.approx(-(lqr.K_[0] @ x))


def test_lqr_predict_matches_compute(lqr, rng):
    X = rng.uniform(-0.3, 0.3, size=(50, 4))
    np.testing.assert_allclose(lqr.predict(X), [lqr.compute(x)[0] for x in X])


def test_policy_guards(lqr):
    assert lqr.compute([0, np.nan, 0, 0]) == (0.0, DIVERGED)
    assert lqr.compute([0, 0, 2e6, 0]) == (0.0, DIVERGED)
    with pytest.raises(ValueError):
        lqr.compute([0, 0, 0])
    with pytest.raises(NotFittedError):
        LQRController().compute(np.zeros(4))


def test_estimator_params_and_clone(mpc):
    params = mpc.get_params()
    assert params["horizon"] == 20 and params["slack_weight"] == 1e5
    c = clone(mpc)
    assert c.get_params()["horizon"] == 20
    assert not hasattr(c, "qp_")
    assert CTMPCController(alpha=0.5).set_params(alpha=0.7).alpha == 0.7


def test_from_gain(model, lqr):
    wrapped = LQRController.from_gain(lqr.K_, model)
    np.testing.assert_allclose(wrapped.A_cl_, lqr.A_cl_)
    assert wrapped.compute(np.full(4, 0.01)) == lqr.compute(np.full(4, 0.01))


def test_lqr_rejects_bad_limits(model):
    with pytest.raises(ValueError):
        LQRController(u_max=0.0).fit(model)


def test_prediction_matrices(model):
    Phi, Gamma = prediction_matrices(model.A, model.B, 5)
    rng = np.random.default_rng(1)
    x, U = rng.normal(size=4), rng.normal(size=5)
    z = x.copy()
    for k in range(5):
        z = model.A @ z + model.B[:, 0] * U[k]
        np.testing.assert_allclose((Phi @ x + Gamma @ U)[4 * k:4 * k + 4], z, atol=1e-12)


@given(small_states)
def test_mpc_equals_lqr_when_unconstrained(x):
    # module-level fits are reused through the session fixtures in the other tests;
    # hypothesis cannot take fixtures, so refit lazily once
    mpc, ctmpc, lqr = _policies()
    for pol in (mpc, ctmpc):
        pol.reset()
        sol = pol.plan(x)
        assert sol.ok
        if len(sol.active_in) == 0 and np.all(np.abs(sol.x[:pol.qp_.N]) < pol.qp_.problem.ub[:pol.qp_.N]):
            assert abs(sol.x[0] - lqr.predict(x[None])[0]) <= 1e-6


_CACHE = {}


def _policies():
    if not _CACHE:
        from twiproa import linear_model
        m = linear_model()
        _CACHE["v"] = (MPCController().fit(m), CTMPCController().fit(m), LQRController().fit(m))
    return _CACHE["v"]


def test_mpc_plan_respects_input_bounds(mpc):
    mpc.reset()
    sol = mpc.plan(np.array([0.0, 0.6, 0.5, 1.0]))
    U = sol.x[:mpc.qp_.N]
    assert sol.ok
    assert np.all(np.abs(U) <= 2.2 + 1e-12)
    assert np.max(np.abs(U)) == pytest.approx(2.2)


def test_mpc_warm_start_does_not_change_solution(mpc, params):
    from twiproa import step_nonlinear
    cold = MPCController(warm_start=False)
    cold.__dict__.update({k: v for k, v in mpc.__dict__.items() if k.endswith("_")})
    cold.warm_start = False
    cold.reset()
    mpc.reset()
    x = np.array([0.0, 0.3, 0.3, 0.2])
    for _ in range(30):
        u_w, _ = mpc.compute(x)
        u_c, _ = cold.compute(x)
        assert u_w == pytest.approx(u_c, abs=1e-8)
        x = step_nonlinear(x, u_w, params)


def test_mpc_stabilizes_nearby_state(mpc, params):
    from twiproa import step_nonlinear
    mpc.reset()
    x = np.array([0.0, 0.2, 0.15, 0.3])
    for _ in range(800):
        u, status = mpc.compute(x)
        assert status == OK
        x = step_nonlinear(x, u, params)
    assert np.linalg.norm(x) < 1e-3


def test_predict_resets_between_rows(ctmpc):
    X = np.array([[0.0, 0.3, 0.2, 0.5], [0.0, -0.1, 0.05, 0.0]])
    batch = ctmpc.predict(X)
    ctmpc.reset()
    single = ctmpc.compute(X[1])[0]
    assert batch[1] == pytest.approx(single, abs=1e-12)


def test_tube_contraction_certificate(model, ctmpc):
    tube = ctmpc.tube_
    assert contraction_factor(model.A, model.B, tube.K_tube, tube.P_tube) <= 0.815 + 1e-9
    d = ctmpc.deltas_
    assert d[0] == 0.0 and d[1] == tube.delta_1
    for i in range(1, len(d) - 1):
        assert d[i + 1] == 0.815 * d[i] + tube.delta_1
    assert tube.delta_1 == pytest.approx(0.075 * np.sqrt(model.B[:, 0] @ tube.P_tube @ model.B[:, 0]))


def test_tightened_sets_follow_funnel(ctmpc):
    K, P = ctmpc.tube_.K_tube[0], ctmpc.tube_.P_tube
    spread = np.sqrt(K @ np.linalg.solve(P, K))
    for i, U in enumerate(ctmpc.stage_inputs_):
        assert U.hi == pytest.approx(2.2 - ctmpc.deltas_[i] * spread)
        assert ctmpc.tightened_input_bound(i) == U.hi
    offsets = np.array([S.b for S in ctmpc.stage_sets_])
    assert np.all(np.diff(offsets, axis=0) <= 1e-12)


@given(st.floats(0.2, 0.99))
def test_tube_synthesis_any_rate(alpha):
    from twiproa import linear_model
    m = linear_model()
    tube = synthesize_tube(m, alpha, 0.075)
    assert tube.contraction_factor(m.A, m.B) <= alpha + 1e-9


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
def test_tube_rejects_bad_rate(model, alpha):
    with pytest.raises(SynthesisError):
        synthesize_tube(model, alpha, 0.075)


def test_ctmpc_rejects_oversized_disturbance(model):
    with pytest.raises(SynthesisError):
        CTMPCController(w_max=1.0).fit(model)

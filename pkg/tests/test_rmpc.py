import math
import warnings

import numpy as np
import pytest
import scipy.linalg

from safeid.model import History
from safeid.rmpc import (RmpcConfig, RmpcInfeasible, RmpcPolicy, build_tubes, derive_gain_and_terminal, lqr_gain,
                         max_feasible_excitation, solve_dare, tracking_target)
from safeid.model import SystemParams
from safeid.sets import Box, EmptySetError, UncertaintySet

P_ROOT = (1.21 + math.sqrt(1.21**2 + 4)) / 2


def config(h=0.5, W=5, theta0=None, w=1.0):
    return RmpcConfig(
        nominal=SystemParams([[1.1]], [[1.0]]),
        theta0=theta0 or UncertaintySet.from_bounds([[1.0, 0.9]], [[1.2, 1.1]]),
        Q=np.eye(1), R=np.eye(1), horizon=W,
        X=Box.symmetric([10.0]), U=Box.symmetric([10.0]), W=Box.symmetric([w]), H=Box.symmetric([h]),
    )


def test_scalar_dare():
    P = solve_dare([[1.1]], [[1.0]], np.eye(1), np.eye(1))
    assert P[0, 0] == pytest.approx(P_ROOT, abs=1e-10)
    assert P[0, 0] == pytest.approx(1.77374, abs=1e-4)
    K = lqr_gain([[1.1]], [[1.0]], np.eye(1), P)
    assert K[0, 0] == pytest.approx(-0.70343, abs=1e-4)
    assert 1.1 + K[0, 0] == pytest.approx(0.39657, abs=1e-4)
    P0 = solve_dare([[0.0]], [[1.0]], np.eye(1), np.eye(1))
    assert P0[0, 0] == pytest.approx(1.0)
    assert lqr_gain([[0.0]], [[1.0]], np.eye(1), P0)[0, 0] == pytest.approx(0.0)


def test_dare_matches_scipy(np_rng):
    A = np_rng.standard_normal((3, 3))
    B = np_rng.standard_normal((3, 2))
    Q, R = np.eye(3), np.eye(2) * 0.5
    np.testing.assert_allclose(solve_dare(A, B, Q, R), scipy.linalg.solve_discrete_are(A, B, Q, R), rtol=1e-8)


def test_vertex_stability():
    ing = derive_gain_and_terminal(config())
    K = ing.K[0, 0]
    for a in (1.0, 1.2):
        for b in (0.9, 1.1):
            assert abs(a + b * K) < 1


def test_tubes_and_tightening():
    ing = derive_gain_and_terminal(config(h=0.8))
    t = ing.tubes
    np.testing.assert_allclose(t.S.halfwidth, [3.0])
    np.testing.assert_allclose(t.S_eta.halfwidth, [3.8])
    assert t.S_K.halfwidth[0] == pytest.approx(3.0 / (1 - ing.A_K[0, 0]), abs=1e-8)
    assert ing.X_tight.halfwidth[0] == pytest.approx(10 - t.S_K_eta.halfwidth[0])
    assert ing.U_tight.halfwidth[0] == pytest.approx(10 - abs(ing.K[0, 0]) * t.S_K_eta.halfwidth[0] - 0.8)
    assert ing.X_f.issubset(ing.X_tight, tol=1e-12)


def test_zero_excitation_tubes_coincide():
    cfg = config(h=0.0)
    t = build_tubes(cfg, derive_gain_and_terminal(cfg).K)
    assert t.S_eta == t.S and t.S_K_eta == t.S_K
    pt = config(h=0.0, theta0=UncertaintySet.point([[1.1, 1.0]]), w=0.0)
    t0 = build_tubes(pt, derive_gain_and_terminal(pt).K)
    assert t0.S_K_eta.radius == 0


def test_too_much_excitation_is_rejected():
    limit = max_feasible_excitation(config(h=0.0))
    assert 2.9 < limit < 3.1
    derive_gain_and_terminal(config(h=0.99 * limit))
    with pytest.raises(EmptySetError):
        derive_gain_and_terminal(config(h=1.05 * limit))


def _history(x, t=0):
    z = np.zeros((0, 1))
    return History(z, z, z, z, z, t, np.asarray(x, float), np.zeros(1))


def test_zero_state_gives_zero_input():
    pol = RmpcPolicy(config())
    assert pol.decide(_history([0.0]))[0] == pytest.approx(0.0, abs=1e-9)


def test_one_step_horizon_closed_form():
    cfg = config(W=1)
    pol = RmpcPolicy(cfg)
    x = 0.3
    q, _, _ = pol.qp_data([x])
    v = -q[0] / pol.P[0, 0]
    assert pol.plan([x]).v[0, 0] == pytest.approx(v, abs=1e-8)


def test_interior_matches_finite_horizon_lq():
    cfg = config()
    pol = RmpcPolicy(cfg)
    ing = pol.ingredients
    A, B = 1.1, 1.0
    P = ing.P_f[0, 0]
    gains = []
    for _ in range(cfg.horizon):
        k = -(B * P * A) / (1 + B * P * B)
        P = 1 + A * P * A - (A * P * B) ** 2 / (1 + B * P * B)
        gains.append(k)
    x = 0.7
    assert pol.decide(_history([x]))[0] == pytest.approx(gains[-1] * x, abs=1e-6)


def test_infeasible_state_raises_with_time():
    pol = RmpcPolicy(config())
    with pytest.raises(RmpcInfeasible) as info:
        pol.decide(_history([1e3], t=12))
    assert info.value.t == 12


def test_tracking_target_examples():
    g = tracking_target(8.0, 100.0)
    assert g(0)[0] == 0.0
    assert g(50 * math.pi)[0] == pytest.approx(8.0)
    assert tracking_target(0.0, 100.0)(37)[0] == 0.0


def test_config_json_round_trip():
    cfg = config()
    assert RmpcConfig.from_json(cfg.to_json()).to_dict() == cfg.to_dict()


def test_non_stabilising_vertex_warns():
    wide = UncertaintySet.from_bounds([[0.2, 0.1]], [[2.5, 2.0]])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            derive_gain_and_terminal(config(h=0.0, theta0=wide))
        except Exception:
            pass
    assert any(issubclass(c.category, RuntimeWarning) for c in caught)

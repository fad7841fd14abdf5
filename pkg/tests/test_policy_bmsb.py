import math

import numpy as np
import pytest

from safeid.bmsb import (ClosedLoop, conditional_smallball, pass_threshold, probe_directions, replaying,
                         verify_bmsb)
from safeid.model import History, SystemParams, simulate
from safeid.noise import NoiseSpec
from safeid.policy import CallablePolicy, LinearPolicy, excite, switching_policy
from safeid.rng import RngStream

SYS = SystemParams([[1.2]], [[0.9]])
ZERO = NoiseSpec.zero(1)


def hist(x, eta=0.0, t=0):
    z = np.zeros((0, len(np.atleast_1d(x))))
    return History(z, np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)), z, t, np.atleast_1d(np.asarray(x, float)),
                   np.array([eta]))


def test_excited_policy_examples():
    zero = LinearPolicy([[0.0]])
    assert excite(zero, ZERO).decide(hist([3.0]))[0] == 0.0
    assert excite(LinearPolicy([[-1.0]]), NoiseSpec.scaled_sign(0.5)).decide(hist([2.0], 0.5))[0] == -1.5
    traj = simulate(SYS, excite(zero, NoiseSpec.scaled_sign(0.5)), ZERO, None, [0.0], 50, RngStream(0))
    assert set(np.unique(traj.u)) <= {-0.5, 0.5}


def test_linear_policy_examples():
    assert LinearPolicy([[-0.5]]).decide(hist([2.0]))[0] == -1.0
    assert LinearPolicy([[1.0, 2.0]]).decide(hist([1.0, 2.0]))[0] == 5.0


def test_switching_policy():
    inner = CallablePolicy(lambda h: np.zeros(1))
    safe = LinearPolicy([[-1.0]])
    pol = switching_policy(inner, safe, lambda h: abs(h.x[0]) > 8)
    assert pol.decide(hist([9.0]))[0] == -9.0
    assert pol.decide(hist([1.0]))[0] == 0.0


def test_zero_policy_input_direction_always_hits():
    traj = simulate(SYS, excite(LinearPolicy([[0.0]]), NoiseSpec.scaled_sign(0.5)), ZERO, None, [0.0], 5,
                    RngStream(1))
    p = conditional_smallball(SYS, replaying(lambda: LinearPolicy([[0.0]])), NoiseSpec.uniform_box(1.0),
                              NoiseSpec.scaled_sign(0.5), traj, 2, [0.0, 1.0], 0.1, 500, RngStream(2))
    assert p == 1.0
    p0 = conditional_smallball(SYS, replaying(lambda: LinearPolicy([[0.0]])), ZERO, ZERO, traj, 2, [1.0, 0.0], 0.0,
                               10, RngStream(2))
    assert p0 == 1.0


def test_probe_directions_are_unit():
    dirs, cases = probe_directions(1, 1, 16, 10.0, np.array([0.5]), RngStream(3))
    assert dirs.shape == (16, 2) and len(cases) == 16
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert cases[:4] == ["axis"] * 4


def test_pass_threshold():
    assert pass_threshold(1 / 12, 10_000) == pytest.approx(1 / 12 - 3 * math.sqrt(1 / 12 / 10_000))


def _loop(s_z, p_z):
    return ClosedLoop(SYS, lambda: LinearPolicy([[-0.7]]), NoiseSpec.uniform_box(1.0), NoiseSpec.scaled_sign(0.5),
                      np.zeros(1), s_z, p_z, 10 * math.sqrt(2), 1 / 12, "linear")


def test_verify_bmsb_linear_loop_passes():
    rep = verify_bmsb(_loop(1.8415e-4, 1 / 12), [5, 20], L=6, H=2, M=2000, rng=RngStream(4))
    assert rep.passed and len(rep.records) == 2 * 2 * 6
    assert verify_bmsb(_loop(1.8415e-4, 1 / 12), [5], 4, 1, 2000, RngStream(4), method="clopper-pearson").passed
    assert "history,t,lambda_index" in rep.to_csv()


def test_verify_bmsb_degenerate_target_passes():
    assert verify_bmsb(_loop(0.0, 0.0), [3], 2, 1, 10, RngStream(0)).passed


def test_verify_bmsb_detects_failure():
    # threshold far above the excitation level cannot be met
    assert not verify_bmsb(_loop(50.0, 0.5), [3], 2, 1, 500, RngStream(0)).passed

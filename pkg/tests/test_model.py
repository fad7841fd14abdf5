import numpy as np
import pytest

from safeid import SystemParams, simulate, step, trajectory_bound
from safeid.model import History, PolicyError, Trajectory
from safeid.noise import NoiseSpec
from safeid.policy import CallablePolicy, LinearPolicy, excite
from safeid.rng import RngStream

ZERO = NoiseSpec.zero(1)
SYS = SystemParams([[1.2]], [[0.9]])


def test_step_examples():
    assert step(SYS, [0.0], [0.0], [0.0]) == pytest.approx([0.0])
    assert step(SYS, [1.0], [1.0], [0.5]) == pytest.approx([2.6])
    p = SystemParams(np.eye(2), np.zeros((2, 1)))
    assert step(p, [3.0, -4.0], [0.0], [0.0, 0.0]) == pytest.approx([3.0, -4.0])


def test_step_dimension_error_names_argument():
    with pytest.raises(ValueError, match="u"):
        step(SYS, [1.0], [1.0, 2.0], [0.0])


def test_system_params_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SystemParams([[1.0, 0.0]], [[1.0]])


def test_zero_policy_zero_noise_gives_zero_trajectory():
    traj = simulate(SYS, LinearPolicy([[0.0]]), ZERO, ZERO, [0.0], 5, RngStream(0))
    assert np.all(traj.x == 0) and np.all(traj.u == 0)
    assert traj.x.shape == (6, 1) and traj.u.shape == (5, 1)


def test_closed_loop_gain():
    traj = simulate(SYS, LinearPolicy([[-1.0]]), ZERO, ZERO, [1.0], 3, RngStream(0))
    np.testing.assert_allclose(traj.x[:, 0], [1, 0.3, 0.09, 0.027], atol=1e-12)


def test_simulate_deterministic_and_prefix_consistent():
    w = NoiseSpec.uniform_box(1.0)
    pol = excite(LinearPolicy([[-0.7]]), NoiseSpec.scaled_sign(0.5))
    a = simulate(SYS, pol, w, None, [0.0], 2000, RngStream(3))
    b = simulate(SYS, pol, w, None, [0.0], 2000, RngStream(3))
    short = simulate(SYS, pol, w, None, [0.0], 250, RngStream(3))
    assert a.to_csv() == b.to_csv()
    assert a.prefix(250).equals(short)
    assert set(np.unique(a.eta)) <= {-0.5, 0.5}


def test_policy_error_carries_time():
    def boom(h: History):
        if h.t == 4:
            raise PolicyError("no input")
        return np.zeros(1)

    with pytest.raises(PolicyError) as info:
        simulate(SYS, CallablePolicy(boom), ZERO, ZERO, [0.0], 10, RngStream(0))
    assert info.value.t == 4
    assert "t=4" in str(info.value)


def test_history_views_are_read_only():
    seen = []

    def look(h: History):
        seen.append(h.xs.shape[0])
        if h.t > 0:
            with pytest.raises(ValueError):
                h.xs[0, 0] = 1.0
        return np.zeros(1)

    simulate(SYS, CallablePolicy(look), ZERO, ZERO, [1.0], 3, RngStream(0))
    assert seen == [0, 1, 2]


def test_trajectory_bound_examples():
    traj = simulate(SYS, LinearPolicy([[0.0]]), ZERO, ZERO, [0.0], 4, RngStream(0))
    assert trajectory_bound(traj) == 0.0
    one = Trajectory(np.array([[3.0], [0.0]]), np.array([[4.0]]), np.array([[4.0]]), np.zeros((1, 1)),
                     np.zeros((1, 1)), SYS, 0)
    assert trajectory_bound(one) == pytest.approx(5.0)


def test_csv_and_json_round_trip(tmp_path):
    pol = excite(LinearPolicy([[-0.7]]), NoiseSpec.scaled_sign(0.5))
    traj = simulate(SYS, pol, NoiseSpec.uniform_box(1.0), None, [0.0], 50, RngStream(9))
    path = tmp_path / "t.csv"
    text = traj.to_csv(path)
    assert path.read_text() == text
    back = Trajectory.from_csv(text)
    for k in ("x", "u", "eta", "w"):
        assert np.array_equal(getattr(back, k), getattr(traj, k))
    # u_nom is not a CSV column; it is rebuilt as u - eta
    np.testing.assert_allclose(back.u_nom, traj.u_nom, atol=1e-12)
    assert Trajectory.from_json(traj.to_json()).equals(traj)

import math

import pytest

from safeid.bounds import (BmsbParams, SmallBall, bmsb_params, burn_in, constraint_bz, small_ball,
                           small_ball_empirical, theorem1_scaling, theorem2_bound)
from safeid.noise import NoiseSpec, certify
from safeid.rng import RngStream
from safeid.sets import Box

BZ = 10 * math.sqrt(2)


def test_small_ball_plug_in():
    sb = small_ball(*certify(NoiseSpec.uniform_box(1.0))[::2])
    assert (sb.s, sb.p) == pytest.approx((1 / 12, 1 / 12))
    sb = small_ball(0.5, 1.0)
    assert (sb.s, sb.p) == pytest.approx((0.125, 0.25))
    assert small_ball(4.0, 1.0) == SmallBall(1.0, 0.25)
    with pytest.raises(ValueError):
        small_ball(1.0, 0.5)


def test_small_ball_empirical():
    rng = RngStream(11)
    p = small_ball_empirical(NoiseSpec.uniform_box(1.0), [1.0], 1 / 12, 200_000, rng)
    assert p == pytest.approx(11 / 24, abs=3 * math.sqrt(0.25 / 200_000))
    p = small_ball_empirical(NoiseSpec.scaled_sign(0.5), [1.0], 0.125, 100_000, rng)
    assert p == pytest.approx(0.5, abs=0.01)
    assert small_ball_empirical(NoiseSpec.uniform_box(1.0), [1.0], 1.5, 10_000, rng) == 0.0
    with pytest.raises(ValueError):
        small_ball_empirical(NoiseSpec.uniform_box(1.0), [2.0], 0.1, 10_000, rng)


def test_bmsb_params_examples():
    assert constraint_bz(Box.symmetric([10.0]), Box.symmetric([10.0])) == pytest.approx(BZ)
    bp = bmsb_params(SmallBall(1 / 12, 1 / 12), SmallBall(1 / 8, 1 / 4), BZ)
    assert bp.s_z == pytest.approx(1.8415e-4, rel=1e-4)
    assert bp.p_z == pytest.approx(1 / 12)
    bp = bmsb_params(SmallBall(4.0, 0.25), SmallBall(4.0, 0.25), 1.0)
    assert bp.s_z == pytest.approx(1.0) and bp.p_z == 0.25


def test_burn_in_examples():
    bp = BmsbParams(s_z=(1 / 12) * (1 / 8) / (4 * BZ), p_z=1 / 12, b_z=BZ)
    assert burn_in(bp, 2, 0.05) == pytest.approx(9.67e4, rel=0.01)
    unit = BmsbParams(s_z=1.0, p_z=1.0, b_z=1.0)
    assert burn_in(unit, 1, math.exp(-1)) == pytest.approx(10 * (1 + 2 * math.log(10)), rel=1e-12)


def test_theorem2_report():
    bp = BmsbParams(s_z=1.8415e-4, p_z=1 / 12, b_z=BZ)
    r = theorem2_bound(bp, 2, 1, 1.0, 0.05, 1000)
    assert not r.applicable and r.T0 > 1000
    big = theorem2_bound(bp, 2, 1, 1.0, 0.05, int(2 * r.T0))
    assert big.applicable and big.bound < r.bound
    # bound shrinks like 1/sqrt(T) at fixed constants
    r4 = theorem2_bound(bp, 2, 1, 1.0, 0.05, 4000)
    assert r.bound / r4.bound == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        theorem2_bound(BmsbParams(s_z=2.0, p_z=0.1, b_z=1.0), 2, 1, 1.0, 0.05, 10)
    with pytest.raises(ValueError):
        theorem2_bound(bp, 2, 1, 1.0, 0.5, 10)


def test_theorem1_scaling():
    assert theorem1_scaling(1, 1, 1, 1) == pytest.approx((1.0, 1.0))
    p1, p2 = theorem1_scaling(math.sqrt(3), 1.0, 1 / math.sqrt(3), 0.5)
    assert p1 == pytest.approx(6 * math.sqrt(3))
    assert p2 == pytest.approx(9.0)

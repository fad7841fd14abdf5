"""Randomised invariants checked with hypothesis."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from safeid.estimator import spectral_error
from safeid.model import SystemParams
from safeid.qp import SOLVED, QuadProgram, kkt_residuals, solve
from safeid.sets import Box, UncertaintySet, linmap_overapprox, minkowski_sum, pontryagin_diff

finite = st.floats(-5, 5, allow_nan=False)
pos = st.floats(0.0, 3.0, allow_nan=False)


@st.composite
def boxes(draw, dim=2):
    c = draw(arrays(float, dim, elements=finite))
    h = draw(arrays(float, dim, elements=pos))
    return Box(c, h)


@given(boxes(), boxes())
def test_sum_then_difference_roundtrips(a, b):
    back = pontryagin_diff(minkowski_sum(a, b), b)
    np.testing.assert_allclose(back.center, a.center, atol=1e-9)
    np.testing.assert_allclose(back.halfwidth, a.halfwidth, atol=1e-9)


@given(boxes(), arrays(float, (2, 2), elements=finite), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_linmap_encloses_images(b, M, s):
    img = linmap_overapprox(M, b)
    p = b.center + np.asarray(s) * b.halfwidth
    assert img.contains(M @ p, tol=1e-9)


@given(arrays(float, (1, 2), elements=st.floats(-3, 3)), arrays(float, (1, 2), elements=st.floats(-3, 3)))
def test_projection_is_non_expansive(theta_hat, offset):
    th0 = UncertaintySet.from_bounds([[1.0, 0.9]], [[1.2, 1.1]])
    star = th0.clamp(theta_hat + offset)  # any member of the set
    raw = SystemParams.from_theta(theta_hat, 1)
    proj = SystemParams.from_theta(th0.clamp(theta_hat), 1)
    truth = SystemParams.from_theta(star, 1)
    assert spectral_error(proj, truth) <= spectral_error(raw, truth) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_qp_solutions_satisfy_kkt(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    L = rng.standard_normal((n, n))
    P = L @ L.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n) * 3
    lo = -rng.uniform(0.1, 2, n)
    qp = QuadProgram(P, q, np.eye(n), lo, -lo)
    sol = solve(qp)
    assert sol.status == SOLVED
    pr, st_, comp = kkt_residuals(qp, sol.v, sol.y)
    assert pr <= 1e-7 and st_ <= 1e-6 and comp <= 1e-6

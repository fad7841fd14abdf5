"""Small-ball constants, BMSB parameters and the explicit finite-sample bound.

The chain is::

    noise.certify -> small_ball -> bmsb_params -> theorem2_bound

``small_ball`` turns a certified ``(sigma, ratio)`` pair into a threshold
``s`` and probability ``p`` with ``P(lambda' xi >= s) >= p`` for every unit
``lambda``.  ``bmsb_params`` combines the process-noise and excitation
constants into the block-martingale small-ball parameters of the covariate
process ``z_t = (x_t, u_t)``, and ``theorem2_bound`` evaluates the
standard least-squares error bound for BMSB covariates with ``k = 1``,
``Gamma_sb = s_z^2 I`` and ``Gamma_bar = b_z^2 I``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from safeid.noise import NoiseSpec, sample_many
from safeid.rng import RngStream
from safeid.sets import Box


@dataclass(frozen=True)
class SmallBall:
    s: float
    p: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("small-ball threshold must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("small-ball probability must lie in (0, 1]")


@dataclass(frozen=True)
class BmsbParams:
    s_z: float
    p_z: float
    b_z: float
    k: int = 1


@dataclass
class BoundReport:
    T0: float
    bound: float
    T: int
    n: int
    m: int
    d: int
    sigma_sub: float
    b_z: float
    delta: float
    k: int
    p: float
    s_z: float
    log_det: float
    applicable: bool
    poly1: float | None = None
    poly2: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def small_ball(sigma: float, ratio: float) -> SmallBall:
    if ratio < 1:
        raise ValueError(f"ratio must be at least 1, got {ratio}")
    return SmallBall(sigma / (4.0 * ratio), 1.0 / (4.0 * ratio**2))


def small_ball_empirical(spec: NoiseSpec, lam, s: float, N: int, rng: RngStream) -> float:
    """Monte-Carlo frequency of ``lam' xi >= s`` over ``N`` draws."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if abs(np.linalg.norm(lam) - 1.0) > 1e-10:
        raise ValueError("lambda must be a unit vector")
    if N < 10_000:
        raise ValueError("use at least 1e4 draws")
    draws = sample_many(spec, rng, N)
    return float(np.mean(draws @ lam >= s))


def bmsb_params(w: SmallBall, eta: SmallBall, b_z: float) -> BmsbParams:
    if not b_z > 0:
        raise ValueError("b_z must be positive")
    s_z = min(w.s / 4.0, math.sqrt(3.0) / 2.0 * eta.s, w.s * eta.s / (4.0 * b_z))
    return BmsbParams(s_z=s_z, p_z=min(w.p, eta.p), b_z=b_z)


def constraint_bz(X: Box, U: Box) -> float:
    """``max sqrt(|x|^2 + |u|^2)`` over ``X x U`` (attained at a corner)."""
    return float(math.sqrt(np.sum(X.max_abs() ** 2) + np.sum(U.max_abs() ** 2)))


def burn_in(params: BmsbParams, d: int, delta: float) -> float:
    """``T_0`` of the finite-sample bound."""
    p, k = params.p_z, params.k
    log_det = d * math.log(params.b_z**2 / params.s_z**2)
    return 10.0 * k / p**2 * (math.log(1.0 / delta) + 2.0 * d * math.log(10.0 / p) + log_det)


def theorem2_bound(params: BmsbParams, d: int, n: int, sigma_sub: float, delta: float, T: int) -> BoundReport:
    """Error bound ``||theta_hat - theta*||_2 <= ...`` holding w.p. ``1 - 3 delta``.

    The value is returned for every ``T``; ``applicable`` is false below the
    burn-in ``T_0``.
    """
    if params.s_z > params.b_z:
        raise ValueError(f"need s_z <= b_z, got s_z={params.s_z} > b_z={params.b_z}")
    if not 0 < delta < 1.0 / 3.0:
        raise ValueError("delta must lie in (0, 1/3)")
    if T < 1:
        raise ValueError("T must be positive")
    p, s_z = params.p_z, params.s_z
    log_det = d * math.log(params.b_z**2 / s_z**2)
    T0 = burn_in(params, d, delta)
    num = n + d * math.log(10.0 / p) + log_det + math.log(1.0 / delta)
    bound = 90.0 * sigma_sub / p * math.sqrt(num / (T * s_z**2))
    return BoundReport(
        T0=T0, bound=bound, T=int(T), n=n, m=d - n, d=d, sigma_sub=sigma_sub, b_z=params.b_z, delta=delta,
        k=params.k, p=p, s_z=s_z, log_det=log_det, applicable=T >= T0,
    )


def theorem1_scaling(w_bar: float, eta_bar: float, sigma_w: float, sigma_eta: float) -> tuple[float, float]:
    """The two polynomial factors of the order-of-magnitude error bound.

    They carry unspecified absolute constants, so they are reported but
    never turned into a numeric bound.
    """
    for v in (w_bar, eta_bar, sigma_w, sigma_eta):
        if not v > 0:
            raise ValueError("all arguments must be positive")
    poly1 = max(w_bar / sigma_w, eta_bar / sigma_eta, w_bar * eta_bar / (sigma_w * sigma_eta)) * max(w_bar, eta_bar)
    poly2 = w_bar * max(w_bar**2, eta_bar**2) * max(w_bar * sigma_eta, eta_bar * sigma_w, w_bar * eta_bar)
    return poly1, poly2

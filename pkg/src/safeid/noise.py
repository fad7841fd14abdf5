"""Bounded, zero-mean i.i.d. noise families with certified constants.

Every family here is isotropic or product-form, so the smallest eigenvalue
of the covariance equals the per-coordinate variance.  ``certify`` returns
``(sigma, max_norm, ratio)`` where ``sigma**2`` lower-bounds that eigenvalue,
``max_norm`` is an almost-sure bound on the Euclidean norm of a draw and
``ratio = max_norm / sigma`` is the scale-free shape parameter.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import stats

from safeid.rng import RngStream

FAMILIES = ("uniform_box", "scaled_sign", "uniform_sphere", "truncated_gaussian", "zero")

# truncated-Gaussian certification: fixed dedicated seed, sample count, safety shrink
CERT_SEED = 0x5AFE1D
CERT_SAMPLES = 10**6
CERT_SHRINK = 0.98
CERT_MAX_REL_SE = 0.01


class CertificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """A bounded noise distribution.

    ``scale`` is the family's main parameter: the halfwidth ``a`` for
    ``uniform_box``, the magnitude for ``scaled_sign``, the radius for
    ``uniform_sphere`` and the pre-truncation standard deviation for
    ``truncated_gaussian``.  ``radius`` is the truncation radius of the
    latter and unused otherwise.
    """

    family: str
    dim: int = 1
    scale: float = 0.0
    radius: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if self.family != "zero":
            if not (math.isfinite(self.scale) and self.scale > 0):
                raise ValueError(f"{self.family} needs a positive finite scale, got {self.scale!r}")
        if self.family == "truncated_gaussian":
            if self.radius is None or not (math.isfinite(self.radius) and self.radius > 0):
                raise ValueError(f"truncated_gaussian needs a positive truncation radius, got {self.radius!r}")

    # -- constructors -------------------------------------------------------
    @classmethod
    def uniform_box(cls, a: float, dim: int = 1) -> "NoiseSpec":
        return cls("uniform_box", dim, float(a))

    @classmethod
    def scaled_sign(cls, sigma: float, dim: int = 1) -> "NoiseSpec":
        return cls("scaled_sign", dim, float(sigma))

    @classmethod
    def uniform_sphere(cls, r: float, dim: int = 1) -> "NoiseSpec":
        return cls("uniform_sphere", dim, float(r))

    @classmethod
    def truncated_gaussian(cls, std: float, radius: float, dim: int = 1) -> "NoiseSpec":
        return cls("truncated_gaussian", dim, float(std), float(radius))

    @classmethod
    def zero(cls, dim: int = 1) -> "NoiseSpec":
        return cls("zero", dim)

    @property
    def is_zero(self) -> bool:
        return self.family == "zero"

    def scaled(self, c: float) -> "NoiseSpec":
        """The distribution of ``c * xi`` for ``c > 0``."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        if self.is_zero:
            return self
        radius = None if self.radius is None else self.radius * c
        return NoiseSpec(self.family, self.dim, self.scale * c, radius)

    # -- serialisation -------------------------------------------------------
    _KEYS = {
        "uniform_box": "a",
        "scaled_sign": "sigma",
        "uniform_sphere": "r",
        "truncated_gaussian": "std",
    }

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"family": self.family, "dim": int(self.dim)}
        if self.family in self._KEYS:
            d[self._KEYS[self.family]] = float(self.scale)
        if self.family == "truncated_gaussian":
            d["radius"] = float(self.radius)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NoiseSpec":
        family = d["family"]
        if family not in FAMILIES:
            raise ValueError(f"unknown noise family {family!r}")
        dim = int(d.get("dim", 1))
        if family == "zero":
            return cls.zero(dim)
        key = cls._KEYS[family]
        if key not in d:
            raise ValueError(f"{family} spec is missing {key!r}")
        return cls(family, dim, float(d[key]), d.get("radius"))


def sample_many(spec: NoiseSpec, rng: RngStream, count: int) -> np.ndarray:
    """``count`` i.i.d. draws as a ``(count, dim)`` array.

    Draws are prefix-consistent: the first ``k`` rows do not depend on
    ``count``, so a short run reproduces the start of a long one.
    """
    d = spec.dim
    if spec.family == "zero":
        return np.zeros((count, d))
    if spec.family == "uniform_box":
        return rng.generator().uniform(-spec.scale, spec.scale, size=(count, d))
    if spec.family == "scaled_sign":
        bits = rng.generator().random((count, d)) < 0.5
        return np.where(bits, spec.scale, -spec.scale)
    if spec.family == "uniform_sphere":
        g = rng.generator().standard_normal((count, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        out = spec.scale * g / norms
        return _clip_norm(out, spec.scale)
    if spec.family == "truncated_gaussian":
        g = rng.child(0).generator().standard_normal((count, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        u = rng.child(1).generator().random(count)
        # radius by inverse CDF of chi^2_d restricted to [0, (R/std)^2]
        c = (spec.radius / spec.scale) ** 2
        r2 = stats.chi2.ppf(u * stats.chi2.cdf(c, d), d)
        r = spec.scale * np.sqrt(np.minimum(r2, c))
        return _clip_norm(g / norms * r[:, None], spec.radius)
    raise AssertionError(spec.family)


def _clip_norm(v: np.ndarray, bound: float) -> np.ndarray:
    # rounding can push a normalised draw a few ulps past the bound
    n = np.linalg.norm(v, axis=1)
    over = n > bound
    if np.any(over):
        v = v.copy()
        v[over] *= (bound / n[over])[:, None] * (1 - 1e-15)
    return v


def sample(spec: NoiseSpec, rng: RngStream) -> np.ndarray:
    """One draw as a ``(dim,)`` vector."""
    return sample_many(spec, rng, 1)[0]


def certify(spec: NoiseSpec) -> tuple[float, float, float]:
    """Return ``(sigma, max_norm, ratio)`` for ``spec``.

    The zero distribution has no positive ``sigma``; its constants are
    reported as ``(0, 0, inf)``.
    """
    d = spec.dim
    s = spec.scale
    if spec.family == "zero":
        return 0.0, 0.0, math.inf
    if spec.family == "uniform_box":
        return s / math.sqrt(3.0), s * math.sqrt(d), math.sqrt(3.0 * d)
    if spec.family == "scaled_sign":
        return s, s * math.sqrt(d), math.sqrt(d)
    if spec.family == "uniform_sphere":
        return s / math.sqrt(d), s, math.sqrt(d)
    if spec.family == "truncated_gaussian":
        sigma = _certify_truncated_gaussian(d, s, spec.radius)
        max_norm = float(spec.radius)
        return sigma, max_norm, max_norm / sigma
    raise AssertionError(spec.family)


@functools.lru_cache(maxsize=64)
def _certify_truncated_gaussian(dim: int, std: float, radius: float, n: int = CERT_SAMPLES) -> float:
    spec = NoiseSpec.truncated_gaussian(std, radius, dim)
    draws = sample_many(spec, RngStream(CERT_SEED, (dim,)), n)
    centred = draws - draws.mean(axis=0)
    var = np.linalg.eigvalsh(centred.T @ centred / (n - 1)).min()
    # standard error of a per-coordinate variance estimate
    sq = centred**2
    rel_se = float(np.max(sq.std(axis=0, ddof=1) / math.sqrt(n) / sq.mean(axis=0)))
    if not np.isfinite(var) or var <= 0 or rel_se > CERT_MAX_REL_SE:
        raise CertificationError(
            f"truncated_gaussian certification unreliable with {n} samples "
            f"(relative standard error {rel_se:.3g})"
        )
    return CERT_SHRINK * math.sqrt(var)


def support_halfwidth(spec: NoiseSpec) -> np.ndarray:
    """Per-coordinate halfwidth of the smallest box holding every draw."""
    if spec.family == "zero":
        return np.zeros(spec.dim)
    if spec.family in ("uniform_box", "scaled_sign", "uniform_sphere"):
        return np.full(spec.dim, spec.scale)
    return np.full(spec.dim, float(spec.radius))


def truncated_gaussian_variance(dim: int, std: float, radius: float) -> float:
    """Exact per-coordinate variance of the radially truncated Gaussian."""
    c = (radius / std) ** 2
    return std**2 * stats.chi2.cdf(c, dim + 2) / stats.chi2.cdf(c, dim)

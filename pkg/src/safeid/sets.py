"""Axis-aligned boxes, uncertainty boxes on ``(A, B)`` and tube synthesis.

Boxes are closed under Minkowski sum and Pontryagin difference, so both are
exact.  Linear images are over-approximated by interval arithmetic, which is
exact in one dimension and conservative otherwise.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np


class EmptySetError(ValueError):
    """Raised when a Pontryagin difference leaves nothing behind."""

    def __init__(self, index: int, deficit: float):
        super().__init__(f"empty tightened set: coordinate {index} over-tightened by {deficit:.6g}")
        self.index = index
        self.deficit = deficit


class NonContractiveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    halfwidth: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        h = np.asarray(self.halfwidth, dtype=float).reshape(-1)
        if c.shape != h.shape:
            raise ValueError(f"center and halfwidth sizes differ: {c.shape} vs {h.shape}")
        if np.any(h < 0) or not np.all(np.isfinite(h)) or not np.all(np.isfinite(c)):
            raise ValueError("halfwidths must be finite and nonnegative")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "halfwidth", h)

    @classmethod
    def from_bounds(cls, lower, upper) -> "Box":
        lo = np.asarray(lower, dtype=float).reshape(-1)
        hi = np.asarray(upper, dtype=float).reshape(-1)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        return cls((lo + hi) / 2, (hi - lo) / 2)

    @classmethod
    def symmetric(cls, halfwidth) -> "Box":
        h = np.asarray(halfwidth, dtype=float).reshape(-1)
        return cls(np.zeros_like(h), h)

    @classmethod
    def point(cls, v) -> "Box":
        v = np.asarray(v, dtype=float).reshape(-1)
        return cls(v, np.zeros_like(v))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidth

    @property
    def radius(self) -> float:
        return float(self.halfwidth.max()) if self.dim else 0.0

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float).reshape(-1)
        return bool(np.all(np.abs(v - self.center) <= self.halfwidth + tol))

    def issubset(self, other: "Box", tol: float = 0.0) -> bool:
        _check_dims(self, other)
        return bool(np.all(self.lower >= other.lower - tol) and np.all(self.upper <= other.upper + tol))

    def scaled(self, alpha: float) -> "Box":
        """Shrink or grow about the center."""
        return Box(self.center, alpha * self.halfwidth)

    def inflate(self, r: float) -> "Box":
        return Box(self.center, self.halfwidth + r)

    def max_abs(self) -> np.ndarray:
        """Per-coordinate maximum of ``|v_i|`` over the box."""
        return np.abs(self.center) + self.halfwidth

    def vertices(self) -> Iterator[np.ndarray]:
        for signs in itertools.product((-1.0, 1.0), repeat=self.dim):
            yield self.center + np.asarray(signs) * self.halfwidth

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.center, other.center) and np.array_equal(self.halfwidth, other.halfwidth)

    def __repr__(self) -> str:
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"

    def to_dict(self) -> dict[str, Any]:
        return {"center": self.center.tolist(), "halfwidth": self.halfwidth.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Box":
        return cls(d["center"], d["halfwidth"])


def _check_dims(a: Box, b: Box) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def minkowski_sum(a: Box, b: Box) -> Box:
    _check_dims(a, b)
    return Box(a.center + b.center, a.halfwidth + b.halfwidth)


def pontryagin_diff(a: Box, b: Box) -> Box:
    """Largest box ``c`` with ``c + b`` inside ``a``."""
    _check_dims(a, b)
    h = a.halfwidth - b.halfwidth
    if np.any(h < 0):
        i = int(np.argmin(h))
        raise EmptySetError(i, float(-h[i]))
    return Box(a.center - b.center, h)


def linmap_overapprox(M, b: Box) -> Box:
    """Interval hull of ``{M v : v in b}``.  ``M`` may be rectangular."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != b.dim:
        raise ValueError(f"matrix has {M.shape[1]} columns, box has dimension {b.dim}")
    return Box(M @ b.center, np.abs(M) @ b.halfwidth)


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Entrywise interval box on ``theta = [A B]`` (an ``n x (n+m)`` matrix)."""

    center: np.ndarray
    halfwidth: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.center, dtype=float))
        h = np.atleast_2d(np.asarray(self.halfwidth, dtype=float))
        if c.shape != h.shape:
            raise ValueError("center and halfwidth shapes differ")
        if np.any(h < 0) or not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
            raise ValueError("intervals must be finite with nonnegative halfwidth")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "halfwidth", h)
        object.__setattr__(self, "_bounds", (c - h, c + h))

    @classmethod
    def from_bounds(cls, lower, upper) -> "UncertaintySet":
        lo = np.atleast_2d(np.asarray(lower, dtype=float))
        hi = np.atleast_2d(np.asarray(upper, dtype=float))
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        out = cls((lo + hi) / 2, (hi - lo) / 2)
        # keep the given endpoints exactly; center +- halfwidth can be off by an ulp
        object.__setattr__(out, "_bounds", (lo, hi))
        return out

    @classmethod
    def point(cls, theta) -> "UncertaintySet":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return cls(theta, np.zeros_like(theta))

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def m(self) -> int:
        return self.center.shape[1] - self.center.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self._bounds[0]

    @property
    def upper(self) -> np.ndarray:
        return self._bounds[1]

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def clamp(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return np.clip(theta, self.lower, self.upper)

    def vertices(self) -> Iterator[np.ndarray]:
        """Corner matrices; only entries with positive width are enumerated."""
        free = np.flatnonzero(self.halfwidth.reshape(-1) > 0)
        if free.size > 16:
            raise ValueError(f"{free.size} uncertain entries: too many vertices to enumerate")
        for signs in itertools.product((-1.0, 1.0), repeat=free.size):
            v = self.center.copy().reshape(-1)
            v[free] = np.where(np.asarray(signs) > 0, self.upper.reshape(-1)[free], self.lower.reshape(-1)[free])
            yield v.reshape(self.center.shape)

    def to_dict(self) -> dict[str, Any]:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UncertaintySet":
        return cls.from_bounds(d["lower"], d["upper"])


def mismatch_set(theta0: UncertaintySet, X: Box, U: Box, W: Box) -> Box:
    """Box enclosing ``{w + (theta - theta0) z : w in W, z in X x U, theta in theta0}``."""
    n = theta0.n
    if X.dim != n or W.dim != n or U.dim != theta0.m:
        raise ValueError("dimensions of theta0, X, U and W are inconsistent")
    zmax = np.concatenate([X.max_abs(), U.max_abs()])
    return Box(W.center, W.halfwidth + theta0.halfwidth @ zmax)


def induced_inf_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(M).sum(axis=1).max())


def tube(A_K, S: Box, tol: float = 1e-9, max_terms: int = 100_000) -> Box:
    """Outer box of ``sum_{i>=0} A_K^i S``.

    The series is summed until the geometric tail bound
    ``gamma^N (r_S + |c_S|) / (1 - gamma)`` with ``gamma = ||A_K||_inf``
    drops below ``tol``; the tail bound is then added to every halfwidth.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    if A_K.shape != (S.dim, S.dim):
        raise ValueError(f"A_K shape {A_K.shape} does not match box dimension {S.dim}")
    gamma = induced_inf_norm(A_K)
    if gamma >= 1.0:
        raise NonContractiveError(f"non-contractive tube map: ||A_K||_inf = {gamma:.6g} >= 1")
    scale = S.radius + float(np.abs(S.center).max(initial=0.0))
    center = np.zeros(S.dim)
    hw = np.zeros(S.dim)
    power = np.eye(S.dim)
    for N in range(1, max_terms + 1):
        center += power @ S.center
        hw += np.abs(power) @ S.halfwidth
        tail = gamma**N * scale / (1.0 - gamma)
        if tail <= tol:
            break
        power = A_K @ power
    else:
        raise NonContractiveError(f"tube series did not reach tol={tol} in {max_terms} terms")
    return Box(center, hw + tail)

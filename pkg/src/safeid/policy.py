"""Nominal policies and the excitation wrapper ``u_t = pi_t(...) + eta_t``.

Policies see a :class:`~safeid.model.History` and return the nominal input.
They may be nonlinear, time-varying and history dependent, and may raise
:class:`~safeid.model.PolicyError` when no admissible input exists.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from safeid.model import History, PolicyError
from safeid.noise import NoiseSpec

__all__ = [
    "CallablePolicy",
    "ExcitedPolicy",
    "History",
    "LinearPolicy",
    "Policy",
    "PolicyError",
    "SwitchingPolicy",
    "excite",
    "linear_policy",
    "switching_policy",
]


class Policy:
    """Base class: subclasses implement ``decide``."""

    def decide(self, history: History) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        pass


class LinearPolicy(Policy):
    def __init__(self, K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if not np.all(np.isfinite(K)):
            raise ValueError("K must be finite")
        self.K = K

    def decide(self, history: History) -> np.ndarray:
        return self.K @ history.x


class CallablePolicy(Policy):
    """Wrap ``fn(history) -> input`` as a policy."""

    def __init__(self, fn: Callable[[History], np.ndarray], m: int = 1):
        self.fn = fn
        self.m = m

    def decide(self, history: History) -> np.ndarray:
        return np.asarray(self.fn(history), dtype=float).reshape(self.m)


class ExcitedPolicy(Policy):
    """``base`` plus the excitation drawn for the current step.

    The simulator draws ``eta_t`` from ``eta_dist`` and records the nominal
    input and the excitation separately; ``decide`` returns their sum.
    """

    def __init__(self, base: Policy, eta_dist: NoiseSpec):
        self.base = base
        self.eta_dist = eta_dist

    def decide(self, history: History) -> np.ndarray:
        return self.base.decide(history) + history.eta

    def reset(self) -> None:
        self.base.reset()


class SwitchingPolicy(Policy):
    def __init__(self, inner: Policy, safe: Policy, guard: Callable[[History], bool]):
        self.inner = inner
        self.safe = safe
        self.guard = guard

    def decide(self, history: History) -> np.ndarray:
        if self.guard(history):
            return self.safe.decide(history)
        return self.inner.decide(history)

    def reset(self) -> None:
        self.inner.reset()
        self.safe.reset()


def excite(base: Policy, eta_dist: NoiseSpec) -> ExcitedPolicy:
    return ExcitedPolicy(base, eta_dist)


def linear_policy(K) -> LinearPolicy:
    return LinearPolicy(K)


def switching_policy(inner: Policy, safe: Policy, guard: Callable[[History], bool]) -> SwitchingPolicy:
    """Use ``safe`` whenever ``guard(history)`` fires, ``inner`` otherwise."""
    return SwitchingPolicy(inner, safe, guard)

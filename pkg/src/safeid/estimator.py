"""Least-squares identification, projection onto the prior box, error metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from safeid.model import SystemParams, Trajectory
from safeid.sets import UncertaintySet

PINV_RTOL = 1e-10


class LseAccumulator:
    """Streaming Gram ``sum z z'`` and moment ``sum x+ z'`` sums.

    Memory is ``O((n+m)^2)`` whatever the trajectory length.  Two
    accumulators over disjoint pieces of one trajectory merge by addition.
    """

    def __init__(self, n: int, m: int):
        self.n, self.m = n, m
        self.gram = np.zeros((n + m, n + m))
        self.moment = np.zeros((n, n + m))
        self.count = 0

    def update(self, z, x_next) -> None:
        z = np.asarray(z, dtype=float).reshape(self.n + self.m)
        x_next = np.asarray(x_next, dtype=float).reshape(self.n)
        self.gram += np.outer(z, z)
        self.moment += np.outer(x_next, z)
        self.count += 1

    def update_batch(self, Z, X_next) -> None:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.n + self.m)
        X_next = np.asarray(X_next, dtype=float).reshape(-1, self.n)
        self.gram += Z.T @ Z
        self.moment += X_next.T @ Z
        self.count += Z.shape[0]

    def merge(self, other: "LseAccumulator") -> "LseAccumulator":
        if (self.n, self.m) != (other.n, other.m):
            raise ValueError("cannot merge accumulators of different dimensions")
        out = LseAccumulator(self.n, self.m)
        out.gram = self.gram + other.gram
        out.moment = self.moment + other.moment
        out.count = self.count + other.count
        return out

    def estimate(self) -> "Estimate":
        theta, rank_deficient = _pinv_solve(self.moment, self.gram)
        return Estimate(
            theta_hat=SystemParams.from_theta(theta, self.n),
            theta_tilde=None,
            gram=self.gram.copy(),
            rank_deficient=rank_deficient,
            T=self.count,
        )


def _pinv_solve(moment: np.ndarray, gram: np.ndarray) -> tuple[np.ndarray, bool]:
    U, s, Vt = np.linalg.svd(gram)
    smax = s[0] if s.size else 0.0
    keep = s > PINV_RTOL * smax if smax > 0 else np.zeros_like(s, dtype=bool)
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return moment @ inv, bool(not keep.all())


@dataclass
class Estimate:
    theta_hat: SystemParams
    theta_tilde: SystemParams | None
    gram: np.ndarray
    rank_deficient: bool
    T: int

    @property
    def condition_number(self) -> float:
        s = np.linalg.svd(self.gram, compute_uv=False)
        return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")

    def to_json(self) -> str:
        cond = self.condition_number
        return json.dumps(
            {
                "theta_hat": self.theta_hat.to_dict(),
                "theta_tilde": None if self.theta_tilde is None else self.theta_tilde.to_dict(),
                "gram_condition_number": cond if np.isfinite(cond) else None,
                "rank_deficient": self.rank_deficient,
                "T": self.T,
            },
            sort_keys=True,
        )


def lse(traj: Trajectory, theta0: UncertaintySet | None = None) -> Estimate:
    """Least-squares estimate of ``(A, B)`` from one trajectory.

    With ``theta0`` the projected estimate is filled in as well.
    """
    acc = LseAccumulator(traj.n, traj.m)
    acc.update_batch(traj.z, traj.x[1:])
    est = acc.estimate()
    if theta0 is not None:
        est.theta_tilde = project(est.theta_hat, theta0)
    return est


def project(theta_hat: SystemParams, theta0: UncertaintySet) -> SystemParams:
    """Frobenius-norm projection onto the box ``theta0`` (an entrywise clamp).

    A spectral-norm projection differs from this one by at most a factor
    ``sqrt(n)`` in the resulting error; it is not implemented.
    """
    return SystemParams.from_theta(theta0.clamp(theta_hat.theta), theta_hat.n)


def spectral_error(a: SystemParams, b: SystemParams) -> float:
    """Operator 2-norm of ``[A_a B_a] - [A_b B_b]``."""
    da, db = a.theta, b.theta
    if da.shape != db.shape:
        raise ValueError(f"shape mismatch: {da.shape} vs {db.shape}")
    return float(np.linalg.norm(da - db, 2))


def frobenius_error(a: SystemParams, b: SystemParams) -> float:
    return float(np.linalg.norm(a.theta - b.theta))

"""Tube-based robust MPC with excitation-aware tightening.

The nominal model ``(A0, B0)`` is propagated under ``u = K x + v``; the
actual state stays inside the nominal plan shifted by the tube
``S_{K,eta}``, which accounts for model mismatch over the uncertainty box,
the process noise and the excitation injected through the input channel.
Constraints are tightened by that tube and the condensed problem is solved
as a dense QP in the corrections ``v``.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from safeid.model import History, PolicyError, SystemParams
from safeid.policy import Policy
from safeid.qp import SOLVED, QpSolver
from safeid.sets import (
    Box,
    EmptySetError,
    UncertaintySet,
    linmap_overapprox,
    minkowski_sum,
    mismatch_set,
    pontryagin_diff,
    tube,
)

Target = Callable[[int], np.ndarray]


class DareError(RuntimeError):
    pass


class TerminalSetError(RuntimeError):
    pass


class RmpcInfeasible(PolicyError):
    pass


@dataclass(frozen=True)
class RmpcConfig:
    nominal: SystemParams
    theta0: UncertaintySet
    Q: np.ndarray
    R: np.ndarray
    horizon: int
    X: Box
    U: Box
    W: Box
    H: Box
    K: np.ndarray | None = None
    P_f: np.ndarray | None = None
    X_f: Box | None = None
    tol: float = 1e-9
    override_center: bool = False

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n, m = self.nominal.n, self.nominal.m
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError("Q and R have the wrong shape")
        if np.linalg.eigvalsh((Q + Q.T) / 2).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh((R + R.T) / 2).min() <= 0:
            raise ValueError("R must be positive definite")
        if (self.X.dim, self.U.dim, self.W.dim, self.H.dim) != (n, m, n, m):
            raise ValueError("constraint boxes have inconsistent dimensions")
        if self.theta0.center.shape != (n, n + m):
            raise ValueError("theta0 has the wrong shape")
        if not self.override_center and not np.allclose(self.theta0.center, self.nominal.theta):
            if not self.theta0.contains(self.nominal.theta, tol=1e-12):
                raise ValueError("nominal model lies outside theta0")
        for name in ("K", "P_f"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.atleast_2d(np.asarray(val, dtype=float)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "nominal": self.nominal.to_dict(),
            "theta0": self.theta0.to_dict(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "horizon": self.horizon,
            "X": self.X.to_dict(),
            "U": self.U.to_dict(),
            "W": self.W.to_dict(),
            "H": self.H.to_dict(),
            "K": None if self.K is None else self.K.tolist(),
            "P_f": None if self.P_f is None else self.P_f.tolist(),
            "X_f": None if self.X_f is None else self.X_f.to_dict(),
            "tol": self.tol,
            "override_center": self.override_center,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RmpcConfig":
        return cls(
            nominal=SystemParams.from_dict(d["nominal"]),
            theta0=UncertaintySet.from_dict(d["theta0"]),
            Q=d["Q"],
            R=d["R"],
            horizon=int(d["horizon"]),
            X=Box.from_dict(d["X"]),
            U=Box.from_dict(d["U"]),
            W=Box.from_dict(d["W"]),
            H=Box.from_dict(d["H"]),
            K=d.get("K"),
            P_f=d.get("P_f"),
            X_f=None if d.get("X_f") is None else Box.from_dict(d["X_f"]),
            tol=float(d.get("tol", 1e-9)),
            override_center=bool(d.get("override_center", False)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RmpcConfig":
        return cls.from_dict(json.loads(text))


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Fixed-point iteration of the discrete algebraic Riccati equation."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ G
        P_next = (P_next + P_next.T) / 2
        if not np.all(np.isfinite(P_next)):
            break
        if np.abs(P_next - P).max() <= tol * max(1.0, np.abs(P_next).max()):
            return P_next
        P = P_next
    raise DareError("Riccati iteration did not converge; is (A0, B0) stabilisable?")


def lqr_gain(A, B, R, P) -> np.ndarray:
    A, B, R, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, R, P))
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def spectral_radius(M) -> float:
    return float(np.abs(np.linalg.eigvals(np.atleast_2d(M))).max())


@dataclass(frozen=True)
class Tubes:
    S: Box
    S_eta: Box
    S_K: Box
    S_K_eta: Box


@dataclass(frozen=True)
class RmpcIngredients:
    """Everything derived from an :class:`RmpcConfig` before the first solve."""

    K: np.ndarray
    P_f: np.ndarray
    A_K: np.ndarray
    tubes: Tubes
    X_tight: Box
    U_tight: Box
    X_f: Box
    alpha: float
    vertex_radii: tuple[float, ...] = field(default=())


def build_tubes(config: RmpcConfig, K) -> Tubes:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A0, B0 = config.nominal.A, config.nominal.B
    A_K = A0 + B0 @ K
    S = mismatch_set(config.theta0, config.X, config.U, config.W)
    S_eta = minkowski_sum(S, linmap_overapprox(B0, config.H))
    return Tubes(S, S_eta, tube(A_K, S, config.tol), tube(A_K, S_eta, config.tol))


def tightened_sets(config: RmpcConfig, K, tubes: Tubes) -> tuple[Box, Box]:
    """State set ``X - S_{K,eta}`` and input set ``U - K S_{K,eta} - H``."""
    X_t = pontryagin_diff(config.X, tubes.S_K_eta)
    U_t = pontryagin_diff(pontryagin_diff(config.U, linmap_overapprox(K, tubes.S_K_eta)), config.H)
    return X_t, U_t


def derive_gain_and_terminal(config: RmpcConfig, grid: int = 100) -> RmpcIngredients:
    """Feedback gain, terminal weight and terminal box for ``config``.

    Missing ``P_f``/``K`` come from the Riccati equation of the nominal
    model.  The terminal box is the largest ``alpha * (X - S_{K,eta})`` on a
    ``grid``-point grid that is invariant under ``A0 + B0 K`` and whose
    feedback image fits the tightened input set.
    """
    A0, B0 = config.nominal.A, config.nominal.B
    if config.K is None:
        P_f = config.P_f if config.P_f is not None else solve_dare(A0, B0, config.Q, config.R)
        K = lqr_gain(A0, B0, config.R, P_f)
    else:
        K = config.K
        if config.P_f is not None:
            P_f = config.P_f
        else:
            from scipy.linalg import solve_discrete_lyapunov

            A_K = A0 + B0 @ K
            P_f = solve_discrete_lyapunov(A_K.T, config.Q + K.T @ config.R @ K)
    A_K = A0 + B0 @ K

    radii = []
    n = config.nominal.n
    for theta in config.theta0.vertices():
        radii.append(spectral_radius(theta[:, :n] + theta[:, n:] @ K))
    if radii and max(radii) >= 1.0:
        warnings.warn(
            f"feedback gain does not stabilise every vertex of theta0 (max spectral radius {max(radii):.4g})",
            RuntimeWarning,
            stacklevel=2,
        )

    tubes = build_tubes(config, K)
    X_t, U_t = tightened_sets(config, K, tubes)

    if config.X_f is not None:
        return RmpcIngredients(K, P_f, A_K, tubes, X_t, U_t, config.X_f, math.nan, tuple(radii))

    for i in range(grid, 0, -1):
        alpha = i / grid
        X_f = X_t.scaled(alpha)
        invariant = linmap_overapprox(A_K, X_f).issubset(X_f, tol=1e-12)
        if invariant and linmap_overapprox(K, X_f).issubset(U_t, tol=1e-12):
            return RmpcIngredients(K, P_f, A_K, tubes, X_t, U_t, X_f, alpha, tuple(radii))
    raise TerminalSetError("no invariant terminal set found on the alpha grid")


def max_feasible_excitation(config: RmpcConfig, upper: float = 100.0, iters: int = 60) -> float:
    """Largest ``eta`` halfwidth (uniform over input coordinates) for which
    the tightened sets and the terminal box exist."""

    def ok(h: float) -> bool:
        cfg = _with_H(config, Box.symmetric(np.full(config.nominal.m, h)))
        try:
            derive_gain_and_terminal(cfg)
        except (EmptySetError, TerminalSetError):
            return False
        return True

    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, upper
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def _with_H(config: RmpcConfig, H: Box) -> RmpcConfig:
    d = dict(config.__dict__)
    d["H"] = H
    return RmpcConfig(**d)


def tracking_target(amplitude: float, period_scale: float, n: int = 1) -> Target:
    """``g_t = amplitude * sin(t / period_scale)`` on every state coordinate."""

    def g(t: int) -> np.ndarray:
        return np.full(n, amplitude * math.sin(t / period_scale))

    return g


@dataclass
class RmpcPlan:
    t: int
    x_nom: np.ndarray
    u_nom: np.ndarray
    v: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    objective: float


class RmpcPolicy(Policy):
    """Receding-horizon tube MPC; ``decide`` returns ``K x_t + v*_{t|t}``."""

    def __init__(self, config: RmpcConfig, target: Target | None = None, ingredients: RmpcIngredients | None = None,
                 keep_plans: bool = False):
        self.config = config
        self.target = target
        ing = ingredients if ingredients is not None else derive_gain_and_terminal(config)
        self.ingredients = ing
        self.keep_plans = keep_plans
        self.plans: list[RmpcPlan] = []
        self.last_plan: RmpcPlan | None = None
        self._condense()
        self.solver = QpSolver(self.P, self.Acon)

    # The decision vector is v = (v_0, ..., v_{W-1}); stacked nominal states
    # X = Phi x0 + Gam v (k = 0..W) and inputs U = Psi x0 + Lam v.
    def _condense(self) -> None:
        cfg, ing = self.config, self.ingredients
        n, m, W = cfg.nominal.n, cfg.nominal.m, cfg.horizon
        A_K, B0, K = ing.A_K, cfg.nominal.B, ing.K
        Phi = np.zeros(((W + 1) * n, n))
        Gam = np.zeros(((W + 1) * n, W * m))
        Phi[:n] = np.eye(n)
        for k in range(1, W + 1):
            Phi[k * n : (k + 1) * n] = A_K @ Phi[(k - 1) * n : k * n]
            Gam[k * n : (k + 1) * n] = A_K @ Gam[(k - 1) * n : k * n]
            Gam[k * n : (k + 1) * n, (k - 1) * m : k * m] += B0
        Kbar = np.kron(np.eye(W), K)
        Psi = Kbar @ Phi[: W * n]
        Lam = Kbar @ Gam[: W * n] + np.eye(W * m)
        Qbar = np.zeros(((W + 1) * n, (W + 1) * n))
        for k in range(W):
            Qbar[k * n : (k + 1) * n, k * n : (k + 1) * n] = cfg.Q
        Qbar[W * n :, W * n :] = ing.P_f
        Rbar = np.kron(np.eye(W), cfg.R)

        H = Gam.T @ Qbar @ Gam + Lam.T @ Rbar @ Lam
        self.P = (H + H.T) / 2
        self._q_x = Gam.T @ Qbar @ Phi + Lam.T @ Rbar @ Psi
        self._q_g = -Gam.T @ Qbar

        # constraint rows: states k=1..W-1, inputs k=0..W-1, terminal state
        Xt, Ut, Xf = ing.X_tight, ing.U_tight, ing.X_f
        rows = [Gam[n : W * n], Lam, Gam[W * n :]]
        offs = [Phi[n : W * n], Psi, Phi[W * n :]]
        lo = [np.tile(Xt.lower, W - 1), np.tile(Ut.lower, W), Xf.lower]
        hi = [np.tile(Xt.upper, W - 1), np.tile(Ut.upper, W), Xf.upper]
        self.Acon = np.vstack(rows)
        self._c_x = np.vstack(offs)
        self._lo = np.concatenate(lo)
        self._hi = np.concatenate(hi)
        self._Phi, self._Gam, self._Psi, self._Lam = Phi, Gam, Psi, Lam
        self._n_state_rows = (W - 1) * n

    def reset(self) -> None:
        self.solver.reset()
        self.plans = []
        self.last_plan = None

    def fork(self) -> "RmpcPolicy":
        """Cheap copy sharing the condensed matrices but not the warm start."""
        other = copy.copy(self)
        other.solver = copy.copy(self.solver)
        other.plans = []
        return other

    def _targets(self, t: int) -> np.ndarray:
        W, n = self.config.horizon, self.config.nominal.n
        if self.target is None:
            return np.zeros((W + 1) * n)
        return np.concatenate([np.asarray(self.target(t + k), dtype=float).reshape(n) for k in range(W + 1)])

    def qp_data(self, x, t: int = 0):
        """``(q, l, u)`` of the condensed problem at state ``x`` and time ``t``."""
        x = np.asarray(x, dtype=float)
        q = self._q_x @ x
        if self.target is not None:
            q = q + self._q_g @ self._targets(t)
        off = self._c_x @ x
        return q, self._lo - off, self._hi - off

    def plan(self, x, t: int = 0, warm_start: bool = True) -> RmpcPlan:
        x = np.asarray(x, dtype=float).reshape(self.config.nominal.n)
        q, l, u = self.qp_data(x, t)
        sol = self.solver.solve(q, l, u, warm_start=warm_start)
        if sol.status != SOLVED:
            raise RmpcInfeasible(f"RMPC infeasible ({sol.status})", t)
        W, n, m = self.config.horizon, self.config.nominal.n, self.config.nominal.m
        x_nom = (self._Phi @ x + self._Gam @ sol.v).reshape(W + 1, n)
        u_nom = (self._Psi @ x + self._Lam @ sol.v).reshape(W, m)
        return RmpcPlan(t, x_nom, u_nom, sol.v.reshape(W, m), sol.status, sol.primal_residual, sol.dual_residual,
                        sol.objective)

    def decide(self, history: History) -> np.ndarray:
        p = self.plan(history.x, history.t)
        self.last_plan = p
        if self.keep_plans:
            self.plans.append(p)
        return p.u_nom[0].copy()

    def dump_plans(self, path) -> None:
        """Write the kept plans as CSV (one row per time and horizon step)."""
        n, m = self.config.nominal.n, self.config.nominal.m
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "k"] + [f"xnom_{i}" for i in range(n)] + [f"unom_{i}" for i in range(m)]
                       + [f"v_{i}" for i in range(m)] + ["status", "primal_res", "dual_res"])
            for p in self.plans:
                for k in range(self.config.horizon + 1):
                    us = p.u_nom[k].tolist() if k < self.config.horizon else [""] * m
                    vs = p.v[k].tolist() if k < self.config.horizon else [""] * m
                    w.writerow([p.t, k] + p.x_nom[k].tolist() + us + vs + [p.status, p.primal_residual, p.dual_residual])


def rmpc_policy(config: RmpcConfig, target: Target | None = None, **kwargs) -> RmpcPolicy:
    return RmpcPolicy(config, target, **kwargs)

"""Linear dynamics, trajectory records and closed-loop simulation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from safeid.noise import NoiseSpec, sample_many
from safeid.rng import ETA_STREAM, W_STREAM, RngStream

if TYPE_CHECKING:
    from safeid.policy import Policy


class PolicyError(RuntimeError):
    """A policy could not produce an input (for instance an infeasible MPC)."""

    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.message = message
        self.t = t

    def __str__(self) -> str:
        if self.t is None:
            return self.message
        return f"{self.message} (t={self.t})"


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True, eq=False)
class SystemParams:
    """The pair ``(A, B)`` of ``x+ = A x + B u + w``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("A and B must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        """The stacked ``n x (n+m)`` matrix ``[A B]``."""
        return np.hstack([self.A, self.B])

    @classmethod
    def from_theta(cls, theta, n: int) -> "SystemParams":
        theta = _as_matrix(theta, "theta")
        return cls(theta[:, :n], theta[:, n:])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SystemParams):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)

    def __hash__(self):
        return hash((self.A.tobytes(), self.B.tobytes(), self.A.shape, self.B.shape))

    def to_dict(self) -> dict[str, Any]:
        return {"A": self.A.tolist(), "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemParams":
        return cls(d["A"], d["B"])


def _vec(v, size: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape[0] != size:
        raise ValueError(f"{name} has dimension {a.shape[0]}, expected {size}")
    return a


def step(params: SystemParams, x, u, w) -> np.ndarray:
    """One step of the dynamics, ``A x + B u + w``."""
    x = _vec(x, params.n, "x")
    u = _vec(u, params.m, "u")
    w = _vec(w, params.n, "w")
    return params.A @ x + params.B @ u + w


class History:
    """Read-only view handed to a policy at time ``t``.

    Exposes the current state ``x``, the time ``t``, the excitation
    ``eta`` already drawn for this step (part of the conditioning
    information, zero when none) and the past records for ``s < t``.
    """

    __slots__ = ("_x", "_u", "_u_nom", "_eta", "_w", "t", "x", "eta")

    def __init__(self, xs, us, u_noms, etas, ws, t: int, x: np.ndarray, eta: np.ndarray):
        self._x, self._u, self._u_nom, self._eta, self._w = xs, us, u_noms, etas, ws
        self.t = t
        self.x = x
        self.eta = eta

    def _view(self, arr: np.ndarray) -> np.ndarray:
        v = arr[: self.t]
        v.flags.writeable = False
        return v

    @property
    def xs(self) -> np.ndarray:
        return self._view(self._x)

    @property
    def us(self) -> np.ndarray:
        return self._view(self._u)

    @property
    def u_noms(self) -> np.ndarray:
        return self._view(self._u_nom)

    @property
    def etas(self) -> np.ndarray:
        return self._view(self._eta)

    @property
    def ws(self) -> np.ndarray:
        return self._view(self._w)

    @classmethod
    def from_trajectory(cls, traj: "Trajectory", t: int, x=None, eta=None) -> "History":
        """History at time ``t`` built from the first ``t`` records of ``traj``.

        ``x`` and ``eta`` override the current state and excitation, which
        is how conditional rollouts inject resampled values.
        """
        x = traj.x[t] if x is None else np.asarray(x, dtype=float)
        if eta is None:
            eta = traj.eta[t] if t < traj.T else np.zeros(traj.m)
        return cls(traj.x, traj.u, traj.u_nom, traj.eta, traj.w, t, x, np.asarray(eta, dtype=float))


@dataclass(eq=False)
class Trajectory:
    """Records ``t = 0..T-1`` of ``(x, u, u_nom, eta, w)`` plus the terminal state.

    ``x`` has ``T + 1`` rows; the other arrays have ``T`` rows.
    """

    x: np.ndarray
    u: np.ndarray
    u_nom: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    params: SystemParams | None = None
    seed: int | None = None
    config_hash: str | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        T = self.u.shape[0]
        if self.x.shape[0] != T + 1:
            raise ValueError(f"x must have T+1={T + 1} rows, got {self.x.shape[0]}")
        for name in ("u_nom", "eta", "w"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"{name} must have T={T} rows")

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def z(self) -> np.ndarray:
        """Covariates ``z_t = (x_t, u_t)`` for ``t < T``, shape ``(T, n+m)``."""
        return np.hstack([self.x[:-1], self.u])

    def prefix(self, T: int) -> "Trajectory":
        if not 1 <= T <= self.T:
            raise ValueError(f"prefix length {T} outside [1, {self.T}]")
        return Trajectory(
            self.x[: T + 1], self.u[:T], self.u_nom[:T], self.eta[:T], self.w[:T],
            self.params, self.seed, self.config_hash, dict(self.meta),
        )

    def equals(self, other: "Trajectory") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("x", "u", "u_nom", "eta", "w")
        )

    # -- serialisation -------------------------------------------------------
    def csv_header(self) -> list[str]:
        n, m = self.n, self.m
        return (
            ["t"]
            + [f"x_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(m)]
            + [f"eta_{i}" for i in range(m)]
            + [f"w_{i}" for i in range(n)]
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        for t in range(self.T):
            writer.writerow(
                [t]
                + [repr(float(v)) for v in self.x[t]]
                + [repr(float(v)) for v in self.u[t]]
                + [repr(float(v)) for v in self.eta[t]]
                + [repr(float(v)) for v in self.w[t]]
            )
        writer.writerow([self.T] + [repr(float(v)) for v in self.x[self.T]] + [""] * (2 * self.m + self.n))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        n = sum(h.startswith("x_") for h in header)
        m = sum(h.startswith("u_") for h in header)
        T = len(body) - 1
        x = np.array([[float(v) for v in r[1 : 1 + n]] for r in body])
        rec = np.array([[float(v) for v in r[1 + n :]] for r in body[:-1]]).reshape(T, 2 * m + n)
        u, eta, w = rec[:, :m], rec[:, m : 2 * m], rec[:, 2 * m :]
        return cls(x, u, u - eta, eta, w)

    def to_json(self) -> str:
        env = {
            "params": None if self.params is None else self.params.to_dict(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "meta": self.meta,
            "T": self.T,
            "x": self.x.tolist(),
            "u": self.u.tolist(),
            "u_nom": self.u_nom.tolist(),
            "eta": self.eta.tolist(),
            "w": self.w.tolist(),
        }
        return json.dumps(env, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        params = None if d.get("params") is None else SystemParams.from_dict(d["params"])
        arr = {k: np.asarray(d[k], dtype=float) for k in ("x", "u", "u_nom", "eta", "w")}
        return cls(**arr, params=params, seed=d.get("seed"), config_hash=d.get("config_hash"), meta=d.get("meta", {}))


def trajectory_bound(traj: Trajectory) -> float:
    """``max_t sqrt(|x_t|^2 + |u_t|^2)`` over the recorded steps."""
    if traj.T == 0:
        raise ValueError("empty trajectory")
    zsq = np.sum(traj.x[:-1] ** 2, axis=1) + np.sum(traj.u**2, axis=1)
    return float(math.sqrt(zsq.max()))


def simulate(
    params: SystemParams,
    policy: "Policy",
    w_dist: NoiseSpec,
    eta_dist: NoiseSpec | None,
    x0,
    T: int,
    rng: RngStream,
) -> Trajectory:
    """Roll the closed loop ``u_t = pi_t(history) + eta_t`` forward ``T`` steps.

    ``policy`` may be an excited policy (see :func:`safeid.policy.excite`);
    its excitation distribution is then used for ``eta`` and the nominal
    input is recorded separately.  Process noise and excitation come from
    independent child streams of ``rng``.
    """
    from safeid.policy import ExcitedPolicy

    if T < 1:
        raise ValueError("T must be at least 1")
    n, m = params.n, params.m
    base = policy
    if isinstance(policy, ExcitedPolicy):
        if eta_dist is not None and eta_dist != policy.eta_dist:
            raise ValueError("eta_dist conflicts with the excited policy's distribution")
        eta_dist = policy.eta_dist
        base = policy.base
    if eta_dist is None:
        eta_dist = NoiseSpec.zero(m)
    if w_dist.dim != n:
        raise ValueError(f"w_dist has dimension {w_dist.dim}, expected {n}")
    if eta_dist.dim != m:
        raise ValueError(f"eta_dist has dimension {eta_dist.dim}, expected {m}")

    X = np.empty((T + 1, n))
    U = np.empty((T, m))
    Un = np.empty((T, m))
    E = sample_many(eta_dist, rng.child(ETA_STREAM), T)
    Wn = sample_many(w_dist, rng.child(W_STREAM), T)
    X[0] = _vec(x0, n, "x0")
    A, B = params.A, params.B

    base.reset()
    for t in range(T):
        x = X[t]
        h = History(X, U, Un, E, Wn, t, x, E[t])
        try:
            u_nom = base.decide(h)
        except PolicyError as exc:
            exc.t = t
            raise
        u_nom = np.asarray(u_nom, dtype=float).reshape(m)
        Un[t] = u_nom
        U[t] = u_nom + E[t]
        X[t + 1] = A @ x + B @ U[t] + Wn[t]

    return Trajectory(X, U, Un, E, Wn, params=params, seed=rng.seed)

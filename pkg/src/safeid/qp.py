"""Dense convex QP solver (operator splitting with solution polishing).

Solves ::

    minimize    1/2 v'Pv + q'v
    subject to  l <= A v <= u

with the ADMM iteration popularised by OSQP: a regularised linear solve in
``v``, a projection of the auxiliary variable ``z`` onto ``[l, u]`` and a
dual update.  Problem data are equilibrated with Ruiz scaling.  Once an
active set can be guessed from the iterates the equality-constrained KKT
system is solved directly ("polishing"), which returns the exact optimum
whenever the guess is right.

The solver object caches the scaled matrices and the factorisation, so an
MPC loop that only changes ``q``, ``l`` and ``u`` pays for them once.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SOLVED = "solved"
MAX_ITER = "max-iterations"
PRIMAL_INFEASIBLE = "primal-infeasible"

RHO_EQ_FACTOR = 1e3
RHO_MIN = 1e-6
SCALING_MIN, SCALING_MAX = 1e-4, 1e4
INF = 1e20


@dataclass
class QuadProgram:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.q.shape[0]) if np.size(self.A) else np.zeros((0, self.q.shape[0]))
        self.l = np.asarray(self.l, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        nu = self.q.shape[0]
        if self.P.shape != (nu, nu):
            raise ValueError(f"P must be {nu}x{nu}, got {self.P.shape}")
        c = self.A.shape[0]
        if self.l.shape != (c,) or self.u.shape != (c,):
            raise ValueError("l and u must match the number of constraint rows")
        pn = np.abs(self.P).max(initial=0.0)
        if np.abs(self.P - self.P.T).max(initial=0.0) > 1e-12 * max(pn, 1e-300):
            raise ValueError("P is not symmetric")
        if np.any(self.l > self.u):
            raise ValueError("l must not exceed u")

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ self.P @ v + self.q @ v)

    def to_json(self) -> str:
        def enc(a):
            return np.where(np.isfinite(a), a, np.sign(a) * INF).tolist()

        return json.dumps({"P": self.P.tolist(), "q": self.q.tolist(), "A": self.A.tolist(), "l": enc(self.l), "u": enc(self.u)})

    @classmethod
    def from_json(cls, text: str) -> "QuadProgram":
        d = json.loads(text)
        l = np.asarray(d["l"], dtype=float)
        u = np.asarray(d["u"], dtype=float)
        l[l <= -INF] = -np.inf
        u[u >= INF] = np.inf
        return cls(d["P"], d["q"], d["A"], l, u)


@dataclass
class QpSolution:
    v: np.ndarray
    y: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    objective: float = float("nan")
    polished: bool = False
    z: np.ndarray = field(default=None, repr=False)


def kkt_residuals(qp: QuadProgram, v, y) -> tuple[float, float, float]:
    """Constraint violation, stationarity residual and complementarity gap (all inf-norms)."""
    v = np.asarray(v, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    Av = qp.A @ v
    viol = np.maximum(np.maximum(qp.l - Av, Av - qp.u), 0.0)
    primal = float(viol.max(initial=0.0))
    dual = float(np.abs(qp.P @ v + qp.q + qp.A.T @ y).max(initial=0.0))
    with np.errstate(invalid="ignore"):
        lo_gap = np.where(y < 0, -y * (Av - qp.l), 0.0)
        up_gap = np.where(y > 0, y * (qp.u - Av), 0.0)
    compl = float(np.abs(np.concatenate([lo_gap, up_gap])).max(initial=0.0))
    return primal, dual, compl


def _ruiz(P: np.ndarray, A: np.ndarray, sweeps: int):
    nu, c = P.shape[0], A.shape[0]
    D = np.ones(nu)
    E = np.ones(c)
    cost = 1.0
    Ps, As = P.copy(), A.copy()
    for _ in range(sweeps):
        col = np.abs(Ps).max(axis=0)
        if c:
            col = np.maximum(col, np.abs(As).max(axis=0))
        d = 1.0 / np.sqrt(np.clip(col, SCALING_MIN, SCALING_MAX))
        e = 1.0 / np.sqrt(np.clip(np.abs(As).max(axis=1), SCALING_MIN, SCALING_MAX)) if c else E[:0]
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
        mean_col = np.abs(Ps).max(axis=0).mean()
        g = 1.0 / np.clip(mean_col, SCALING_MIN, SCALING_MAX)
        Ps *= g
        cost *= g
    return Ps, As, D, E, cost


class QpSolver:
    """Reusable solver for a fixed ``(P, A)`` with changing ``(q, l, u)``.

    Keeps the previous solution for warm starting; one instance per owner.
    """

    def __init__(
        self,
        P,
        A,
        *,
        rho: float = 0.1,
        sigma: float = 1e-6,
        alpha: float = 1.6,
        scaling_sweeps: int = 10,
        eps_abs: float = 1e-8,
        eps_rel: float = 1e-8,
        eps_pinf: float = 1e-6,
        max_iter: int = 20000,
        check_every: int = 5,
        polish: bool = True,
    ):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        nu = P.shape[0]
        A = np.asarray(A, dtype=float).reshape(-1, nu) if np.size(A) else np.zeros((0, nu))
        self.P, self.A = P, A
        self.nu, self.nc = nu, A.shape[0]
        self.rho, self.sigma, self.alpha = rho, sigma, alpha
        self.eps_abs, self.eps_rel, self.eps_pinf = eps_abs, eps_rel, eps_pinf
        self.max_iter, self.check_every, self.polish = max_iter, check_every, polish

        self.Ps, self.As, self.D, self.E, self.cost = _ruiz(P, A, scaling_sweeps)
        self.AsT = self.As.T.copy()
        self._kinv_cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        try:
            self._p_chol = sla.cho_factor(P)
        except (np.linalg.LinAlgError, ValueError):
            self._p_chol = None
        self._warm: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    # -- internals -----------------------------------------------------------
    def _factor(self, ls: np.ndarray, us: np.ndarray):
        eq = np.abs(us - ls) < 1e-12
        free = (ls <= -INF) & (us >= INF)
        key = eq.tobytes() + free.tobytes()
        hit = self._kinv_cache.get(key)
        if hit is None:
            rho = np.full(self.nc, self.rho)
            rho[eq] *= RHO_EQ_FACTOR
            rho[free] = RHO_MIN
            K = self.Ps + self.sigma * np.eye(self.nu) + self.AsT @ (rho[:, None] * self.As)
            hit = (np.linalg.inv(K), rho)
            self._kinv_cache[key] = hit
        return hit

    def _residuals(self, v, z, y, q):
        Av = self.A @ v
        Pv = self.P @ v
        ATy = self.A.T @ y
        r_p = float(np.abs(Av - z).max(initial=0.0))
        r_d = float(np.abs(Pv + q + ATy).max(initial=0.0))
        e_p = self.eps_abs + self.eps_rel * max(np.abs(Av).max(initial=0.0), np.abs(z).max(initial=0.0))
        e_d = self.eps_abs + self.eps_rel * max(
            np.abs(Pv).max(initial=0.0), np.abs(ATy).max(initial=0.0), np.abs(q).max(initial=0.0)
        )
        return r_p, r_d, e_p, e_d

    def _try_polish(self, lower_act, upper_act, q, l, u):
        act = np.flatnonzero(lower_act | upper_act)
        Aa = self.A[act]
        rhs_b = np.where(lower_act[act], l[act], u[act])
        na = act.size
        K = np.zeros((self.nu + na, self.nu + na))
        K[: self.nu, : self.nu] = self.P
        K[: self.nu, self.nu :] = Aa.T
        K[self.nu :, : self.nu] = Aa
        rhs = np.concatenate([-q, rhs_b])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        v = sol[: self.nu]
        y = np.zeros(self.nc)
        y[act] = sol[self.nu :]
        Av = self.A @ v
        eq = np.abs(u - l) < 1e-12
        e_p = self.eps_abs + self.eps_rel * np.abs(Av).max(initial=0.0)
        viol = max(float((l - Av).max(initial=-np.inf)), float((Av - u).max(initial=-np.inf)), 0.0)
        if viol > e_p:
            return None
        wrong_sign = np.where(eq, 0.0, np.where(lower_act, np.maximum(y, 0.0), np.where(upper_act, np.maximum(-y, 0.0), 0.0)))
        if wrong_sign.max(initial=0.0) > self.eps_abs:
            return None
        z = np.clip(Av, l, u)
        r_p, r_d, e_p, e_d = self._residuals(v, z, y, q)
        if r_p > e_p or r_d > e_d:
            return None
        return v, z, y, r_p, r_d

    def _done(self, qp_q, v, z, y, status, r_p, r_d, it, polished):
        obj = float(0.5 * v @ self.P @ v + qp_q @ v)
        if status == SOLVED:
            self._warm = (v.copy(), z.copy(), y.copy())
        return QpSolution(v, y, status, r_p, r_d, it, obj, polished, z)

    # -- public --------------------------------------------------------------
    def reset(self) -> None:
        self._warm = None

    def solve(self, q, l, u, warm_start: bool | tuple = True) -> QpSolution:
        """Solve for new ``(q, l, u)``.

        ``warm_start`` may be ``True`` (reuse the last solution), ``False``
        (cold start) or an explicit ``(v, z, y)`` triple.
        """
        q = np.asarray(q, dtype=float).reshape(self.nu)
        l = np.asarray(l, dtype=float).reshape(self.nc)
        u = np.asarray(u, dtype=float).reshape(self.nc)
        if np.any(l > u):
            raise ValueError("l must not exceed u")

        # unconstrained minimiser, optimal as soon as it is feasible
        if self._p_chol is not None:
            v = -sla.cho_solve(self._p_chol, q)
            Av = self.A @ v
            e_p = self.eps_abs + self.eps_rel * np.abs(Av).max(initial=0.0)
            if np.all(Av >= l - e_p) and np.all(Av <= u + e_p):
                z = np.clip(Av, l, u)
                y = np.zeros(self.nc)
                r_p, r_d, _, _ = self._residuals(v, z, y, q)
                return self._done(q, v, z, y, SOLVED, r_p, r_d, 0, True)

        if warm_start is True:
            warm = self._warm
        elif warm_start is False or warm_start is None:
            warm = None
        else:
            warm = tuple(np.asarray(a, dtype=float) for a in warm_start)

        if warm is not None and self.polish:
            _, _, y0 = warm
            pol = self._try_polish(y0 < 0, y0 > 0, q, l, u)
            if pol is not None:
                v, z, y, r_p, r_d = pol
                return self._done(q, v, z, y, SOLVED, r_p, r_d, 0, True)

        D, E, c = self.D, self.E, self.cost
        qs = c * D * q
        with np.errstate(over="ignore", invalid="ignore"):
            ls = np.where(np.isfinite(l), E * l, -INF)
            us = np.where(np.isfinite(u), E * u, INF)
        Kinv, rho = self._factor(ls, us)
        As, AsT = self.As, self.AsT
        sigma, alpha = self.sigma, self.alpha

        if warm is None:
            x = np.zeros(self.nu)
            z = np.zeros(self.nc)
            y = np.zeros(self.nc)
        else:
            v0, z0, y0 = warm
            x = v0 / D
            z = E * z0
            y = c * y0 / E

        last_act = None
        y_prev = y.copy()
        for it in range(1, self.max_iter + 1):
            xt = Kinv @ (sigma * x - qs + AsT @ (rho * z - y))
            zt = As @ xt
            x = alpha * xt + (1.0 - alpha) * x
            zr = alpha * zt + (1.0 - alpha) * z
            z_new = np.clip(zr + y / rho, ls, us)
            y = y + rho * (zr - z_new)
            z = z_new
            if it % self.check_every and it != self.max_iter:
                y_prev = y
                continue

            v = D * x
            zu = z / E
            yu = E * y / c
            r_p, r_d, e_p, e_d = self._residuals(v, zu, yu, q)
            if r_p <= e_p and r_d <= e_d:
                if self.polish:
                    pol = self._try_polish(zu - l < -yu, u - zu < yu, q, l, u)
                    if pol is not None:
                        return self._done(q, *pol[:3], SOLVED, pol[3], pol[4], it, True)
                return self._done(q, v, zu, yu, SOLVED, r_p, r_d, it, False)
            if self.polish:
                lower_act, upper_act = zu - l < -yu, u - zu < yu
                act = (lower_act.tobytes(), upper_act.tobytes())
                if act != last_act:
                    last_act = act
                    pol = self._try_polish(lower_act, upper_act, q, l, u)
                    if pol is not None:
                        return self._done(q, *pol[:3], SOLVED, pol[3], pol[4], it, True)
            if self._primal_infeasible(E * (y - y_prev) / c, l, u):
                return self._done(q, v, zu, yu, PRIMAL_INFEASIBLE, r_p, r_d, it, False)
            y_prev = y

        return self._done(q, v, zu, yu, MAX_ITER, r_p, r_d, self.max_iter, False)

    def _primal_infeasible(self, dy: np.ndarray, l: np.ndarray, u: np.ndarray) -> bool:
        norm = np.abs(dy).max(initial=0.0)
        if norm < 1e-10:
            return False
        if np.abs(self.A.T @ dy).max(initial=0.0) > self.eps_pinf * norm:
            return False
        pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        if np.any((pos > 0) & ~np.isfinite(u)) or np.any((neg < 0) & ~np.isfinite(l)):
            return False
        val = float(u[pos > 0] @ pos[pos > 0] + l[neg < 0] @ neg[neg < 0])
        return bool(val < -self.eps_pinf * norm)


def solve(qp: QuadProgram, eps_abs: float = 1e-8, eps_rel: float = 1e-8, max_iter: int = 20000, **kwargs) -> QpSolution:
    """One-shot solve of ``qp``."""
    solver = QpSolver(qp.P, qp.A, eps_abs=eps_abs, eps_rel=eps_rel, max_iter=max_iter, **kwargs)
    return solver.solve(qp.q, qp.l, qp.u, warm_start=False)

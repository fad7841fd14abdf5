"""Monte-Carlo check of the block-martingale small-ball condition (k = 1).

For a fixed history up to time ``t`` (states, inputs and the excitation
``eta_t``) the next covariate ``z_{t+1} = (x_{t+1}, u_{t+1})`` is random only
through ``w_t`` and ``eta_{t+1}``.  We redraw those two, roll the closed loop
one step with the policy in exactly the state it had in the original run,
and estimate ``P(|lambda' z_{t+1}| >= s_z)`` for a set of directions.
This is sampled evidence for the condition, not a proof of it.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from safeid.model import History, SystemParams, Trajectory, simulate
from safeid.noise import NoiseSpec, sample_many
from safeid.policy import Policy, excite
from safeid.rng import RngStream

PolicyFactory = Callable[[Trajectory, int], Policy]


def fork(policy: Policy) -> Policy:
    """Independent copy of ``policy`` including its warm-start state."""
    f = getattr(policy, "fork", None)
    if f is not None:
        return f()
    return copy.deepcopy(policy)


def replaying(make_policy: Callable[[], Policy]) -> PolicyFactory:
    """Factory that rebuilds a policy and replays it over ``traj`` up to time ``t``.

    The replayed policy is in the same internal state as during the
    original simulation just before it was asked for ``u_{t+1}``.
    """

    def factory(traj: Trajectory, t: int) -> Policy:
        pol = make_policy()
        pol.reset()
        for s in range(t + 1):
            pol.decide(History.from_trajectory(traj, s))
        return pol

    return factory


def _history_after(traj: Trajectory, t: int, x_next: np.ndarray, w_t: np.ndarray, eta_next: np.ndarray) -> History:
    ws = traj.w[: t + 1].copy()
    ws[t] = w_t
    return History(traj.x, traj.u, traj.u_nom, traj.eta, ws, t + 1, x_next, eta_next)


def rollout_one_step(system: SystemParams, policy: Policy, traj: Trajectory, t: int, w_t, eta_next) -> np.ndarray:
    """``z_{t+1}`` given the history through ``t`` and explicit ``(w_t, eta_{t+1})``.

    ``policy`` must already be in its time-``t`` state; it is advanced.
    """
    w_t = np.asarray(w_t, dtype=float).reshape(system.n)
    eta_next = np.asarray(eta_next, dtype=float).reshape(system.m)
    x_next = system.A @ traj.x[t] + system.B @ traj.u[t] + w_t
    u_next = np.asarray(policy.decide(_history_after(traj, t, x_next, w_t, eta_next)), dtype=float).reshape(system.m)
    return np.concatenate([x_next, u_next + eta_next])


def conditional_smallball(
    system: SystemParams,
    policy_factory: PolicyFactory,
    w_dist: NoiseSpec,
    eta_dist: NoiseSpec,
    history: Trajectory,
    t: int,
    lam,
    s_z: float,
    M: int,
    rng: RngStream,
):
    """Frequency of ``|lam' z_{t+1}| >= s_z`` over ``M`` fresh ``(w_t, eta_{t+1})``.

    ``lam`` is one unit vector or an ``(L, n+m)`` array of them; the same
    ``M`` rollouts serve every direction.
    """
    lam = np.asarray(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    if np.any(np.abs(np.linalg.norm(lam, axis=1) - 1.0) > 1e-10):
        raise ValueError("directions must be unit vectors")
    if not 0 <= t < history.T:
        raise ValueError(f"t={t} outside the recorded history")
    if s_z <= 0:
        return 1.0 if single else np.ones(lam.shape[0])

    base = policy_factory(history, t)
    Wd = sample_many(w_dist, rng.child(1), M)
    Ed = sample_many(eta_dist, rng.child(2), M)
    Z = np.empty((M, system.n + system.m))
    for i in range(M):
        Z[i] = rollout_one_step(system, fork(base), history, t, Wd[i], Ed[i])
    probs = np.mean(np.abs(Z @ lam.T) >= s_z, axis=0)
    return float(probs[0]) if single else probs


def probe_directions(n: int, m: int, L: int, k0: float, drift: np.ndarray, rng: RngStream):
    """``L`` unit directions in ``R^{n+m}`` with a case label each.

    Signed coordinate axes come first.  The rest alternate between the
    small-input-weight regime ``|lam_u| <= 1/k0`` (with the state part
    aligned or anti-aligned with ``drift = theta* z_t``) and uniformly random
    directions, which nearly always have ``|lam_u| > 1/k0``.
    """
    d = n + m
    g = rng.generator()
    dirs, cases = [], []
    for i in range(d):
        for sgn in (1.0, -1.0):
            e = np.zeros(d)
            e[i] = sgn
            dirs.append(e)
            cases.append("axis")
    k = 0
    while len(dirs) < L:
        if k % 2 == 0:
            r = g.uniform(0.0, 1.0) / k0
            l2 = g.standard_normal(m)
            l2 *= r / np.linalg.norm(l2)
            l1 = g.standard_normal(n)
            l1 *= math.sqrt(1.0 - r * r) / np.linalg.norm(l1)
            want_nonneg = (k // 2) % 2 == 0
            proj = float(l1 @ drift)
            if (proj >= 0) != want_nonneg:
                l1 = -l1
            lam = np.concatenate([l1, l2])
            label = "i" if float(l1 @ drift) >= 0 else "ii"
        else:
            lam = g.standard_normal(d)
            lam /= np.linalg.norm(lam)
            label = "iii" if np.linalg.norm(lam[n:]) > 1.0 / k0 else ("i" if lam[:n] @ drift >= 0 else "ii")
        lam /= np.linalg.norm(lam)
        dirs.append(lam)
        cases.append(label)
        k += 1
    return np.array(dirs[:L]), cases[:L]


@dataclass
class ClosedLoop:
    """What the checker needs to regenerate and probe a closed-loop process."""

    system: SystemParams
    make_policy: Callable[[], Policy]
    w_dist: NoiseSpec
    eta_dist: NoiseSpec
    x0: np.ndarray
    s_z: float
    p_z: float
    b_z: float
    s_w: float
    label: str = ""


@dataclass
class BmsbReport:
    label: str
    times: list[int]
    records: list[dict]
    min_probability: float
    p_z: float
    s_z: float
    threshold: float
    passed: bool
    M: int
    H: int
    L: int
    method: str = "normal"
    k: int = 1
    note: str = field(default="Monte-Carlo evidence over sampled histories and directions, not a proof")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["history", "t", "lambda_index", "case", "probability"])
        for r in self.records:
            w.writerow([r["history"], r["t"], r["lambda_index"], r["case"], repr(r["probability"])])
        return buf.getvalue()


def pass_threshold(p_z: float, M: int) -> float:
    return p_z - 3.0 * math.sqrt(p_z / M)


def verify_bmsb(
    loop: ClosedLoop,
    times: list[int],
    L: int,
    H: int,
    M: int,
    rng: RngStream,
    method: str = "normal",
) -> BmsbReport:
    """Estimate conditional small-ball probabilities on ``H`` fresh histories.

    ``method="normal"`` passes when every estimate is at least
    ``p_z - 3 sqrt(p_z / M)``; ``method="clopper-pearson"`` passes when no
    estimate rejects ``p >= p_z`` at the one-sided 0.135% level.
    """
    if min(L, H, M) < 1 or not times:
        raise ValueError("times, L, H and M must all be nonempty/positive")
    if method not in ("normal", "clopper-pearson"):
        raise ValueError(f"unknown method {method!r}")
    times = sorted(int(t) for t in times)
    system = loop.system
    n, m = system.n, system.m
    k0 = max(2.0 / math.sqrt(3.0), 4.0 * loop.b_z / loop.s_w) if loop.s_w > 0 else math.inf
    factory = replaying(loop.make_policy)
    records = []
    for h in range(H):
        traj = simulate(system, excite(loop.make_policy(), loop.eta_dist), loop.w_dist, None, loop.x0,
                        times[-1] + 1, rng.child(h, 0))
        for t in times:
            drift = system.theta @ traj.z[t]
            lams, cases = probe_directions(n, m, L, k0, drift, rng.child(h, t + 1, 1))
            probs = conditional_smallball(system, factory, loop.w_dist, loop.eta_dist, traj, t, lams, loop.s_z, M,
                                          rng.child(h, t + 1, 2))
            for j, (p, c) in enumerate(zip(np.atleast_1d(probs), cases)):
                records.append({"history": h, "t": t, "lambda_index": j, "case": c, "probability": float(p)})

    probs = np.array([r["probability"] for r in records])
    min_p = float(probs.min())
    threshold = pass_threshold(loop.p_z, M)
    if loop.p_z <= 0:
        passed = True
    elif method == "normal":
        passed = bool(min_p >= threshold)
    else:
        hits = np.round(probs * M)
        upper = np.where(hits >= M, 1.0, stats.beta.ppf(1 - 0.00135, hits + 1, M - hits))
        passed = bool(np.all(upper >= loop.p_z))
    return BmsbReport(loop.label, times, records, min_p, loop.p_z, loop.s_z, threshold, passed, M, H, L, method)

"""Experiment runners: estimation sweep, trajectory envelope, bound and BMSB reports."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from safeid import __version__
from safeid.bmsb import BmsbReport, ClosedLoop, verify_bmsb
from safeid.bounds import bmsb_params, constraint_bz, small_ball, theorem1_scaling, theorem2_bound
from safeid.estimator import lse, spectral_error
from safeid.harness import plotting
from safeid.harness.config import ExperimentConfig
from safeid.model import PolicyError, Trajectory, simulate, trajectory_bound
from safeid.noise import certify
from safeid.policy import LinearPolicy, Policy, excite
from safeid.rmpc import RmpcConfig, RmpcPolicy, derive_gain_and_terminal, lqr_gain, solve_dare, tracking_target
from safeid.rng import RngStream

log = logging.getLogger(__name__)

RESULT_HEADER = ["mode", "sigma_eta", "T", "seed", "error_raw", "error_proj", "bz_realized", "infeasible", "violations"]
REPEAT_STREAM = 100
ENVELOPE_STREAM = 200
BMSB_STREAM = 300


def _f(v: float) -> str:
    return repr(float(v))


def rmpc_config(cfg: ExperimentConfig, sigma_eta: float) -> RmpcConfig:
    return RmpcConfig(
        nominal=cfg.nominal,
        theta0=cfg.theta0,
        Q=cfg.Q,
        R=cfg.R,
        horizon=cfg.horizon,
        X=cfg.X,
        U=cfg.U,
        W=cfg.W_box,
        H=cfg.H_box(sigma_eta),
    )


def policy_maker(cfg: ExperimentConfig, mode: str, sigma_eta: float) -> Callable[[], Policy]:
    """Zero-argument factory returning a fresh nominal policy for ``mode``."""
    if mode == "linear-baseline":
        nom = cfg.nominal
        P = solve_dare(nom.A, nom.B, cfg.Q, cfg.R)
        K = lqr_gain(nom.A, nom.B, cfg.R, P)
        return lambda: LinearPolicy(K)
    rc = rmpc_config(cfg, sigma_eta)
    ing = derive_gain_and_terminal(rc)
    target = tracking_target(cfg.tracking_amplitude, cfg.tracking_scale, cfg.nominal.n) if mode == "lq-tracking" else None
    return lambda: RmpcPolicy(rc, target, ingredients=ing)


def count_violations(traj: Trajectory, cfg: ExperimentConfig) -> int:
    X, U = cfg.X, cfg.U
    tol = 1e-9
    bad_x = np.any(np.abs(traj.x - X.center) > X.halfwidth + tol, axis=1)
    bad_u = np.any(np.abs(traj.u - U.center) > U.halfwidth + tol, axis=1)
    return int(bad_x.sum() + bad_u.sum())


def run_closed_loop(cfg: ExperimentConfig, mode: str, sigma_eta: float, T: int, rng: RngStream,
                    make: Callable[[], Policy] | None = None) -> tuple[Trajectory, int | None]:
    """Simulate ``T`` steps; on a policy failure return the valid prefix and the failure time."""
    make = make or policy_maker(cfg, mode, sigma_eta)
    pol = excite(make(), cfg.eta_dist(sigma_eta))
    try:
        return simulate(cfg.true_system, pol, cfg.w_dist, None, cfg.x0, T, rng), None
    except PolicyError as exc:
        t_fail = exc.t if exc.t is not None else 0
        log.warning("%s sigma_eta=%g: %s", mode, sigma_eta, exc)
        if t_fail < 1:
            return None, 0
        return simulate(cfg.true_system, excite(make(), cfg.eta_dist(sigma_eta)), cfg.w_dist, None, cfg.x0, t_fail,
                        rng), t_fail


@dataclass
class SweepResult:
    rows: list[dict]
    summary: dict
    timings: list[dict]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in self.rows:
            w.writerow([r["mode"], _f(r["sigma_eta"]), r["T"], r["seed"], _f(r["error_raw"]), _f(r["error_proj"]),
                        _f(r["bz_realized"]), int(r["infeasible"]), r["violations"]])
        return buf.getvalue()


def summarize(rows: list[dict]) -> dict:
    cells = {}
    for r in rows:
        cells.setdefault((r["mode"], r["sigma_eta"], r["T"]), []).append(r)
    out = []
    for (mode, s, T) in sorted(cells):
        rs = [r for r in cells[(mode, s, T)] if not r["infeasible"]]
        proj = np.array([r["error_proj"] for r in rs])
        raw = np.array([r["error_raw"] for r in rs])
        out.append({
            "mode": mode,
            "sigma_eta": s,
            "T": T,
            "n": len(rs),
            "infeasible": len(cells[(mode, s, T)]) - len(rs),
            "error_proj_mean": float(proj.mean()) if rs else None,
            "error_proj_std": float(proj.std(ddof=1)) if len(rs) > 1 else 0.0,
            "error_raw_mean": float(raw.mean()) if rs else None,
            "error_raw_std": float(raw.std(ddof=1)) if len(rs) > 1 else 0.0,
            "error_proj_max": float(proj.max()) if rs else None,
        })
    return {
        "cells": out,
        "total_rows": len(rows),
        "total_violations": int(sum(r["violations"] for r in rows)),
        "infeasible_rows": int(sum(bool(r["infeasible"]) for r in rows)),
        "max_bz_realized": float(max((r["bz_realized"] for r in rows if not r["infeasible"]), default=0.0)),
    }


def run_estimation_sweep(cfg: ExperimentConfig, out_dir: str | None = None, figures: bool = True) -> SweepResult:
    """Simulate, estimate and project for every ``(mode, sigma_eta, T, repeat)``.

    All ``T`` values of one ``(mode, sigma_eta, repeat)`` are prefixes of a
    single run of length ``max(T_grid)``.  The simulator is prefix-consistent,
    so this is identical to separate runs with the same seed.
    """
    theta_star = cfg.true_system
    theta0 = cfg.theta0
    Ts = sorted(int(T) for T in cfg.T_grid)
    rows, timings = [], []
    master = RngStream(cfg.seed)
    for mode in cfg.modes:
        for s in cfg.sigma_eta_grid:
            make = policy_maker(cfg, mode, s)
            for r in range(cfg.repeats):
                rng = master.child(REPEAT_STREAM, r)
                t0 = time.perf_counter()
                traj, t_fail = run_closed_loop(cfg, mode, s, Ts[-1], rng, make)
                elapsed = time.perf_counter() - t0
                for T in Ts:
                    row = {"mode": mode, "sigma_eta": float(s), "T": T, "seed": rng.derive_seed()}
                    if t_fail is not None and T > t_fail:
                        row.update(error_raw=math.nan, error_proj=math.nan, bz_realized=math.nan, infeasible=True,
                                   violations=0)
                    else:
                        pre = traj.prefix(T)
                        est = lse(pre, theta0)
                        row.update(
                            error_raw=spectral_error(est.theta_hat, theta_star),
                            error_proj=spectral_error(est.theta_tilde, theta_star),
                            bz_realized=trajectory_bound(pre),
                            infeasible=False,
                            violations=count_violations(pre, cfg),
                        )
                    rows.append(row)
                timings.append({"mode": mode, "sigma_eta": float(s), "repeat": r, "T": Ts[-1], "wall_time": elapsed})
            log.info("sweep %s sigma_eta=%g done", mode, s)
    result = SweepResult(rows, summarize(rows), timings)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
            fh.write(result.csv_text())
        _write_json(os.path.join(out_dir, "summary.json"), result.summary)
        _write_json(os.path.join(out_dir, "timing.json"), {"runs": timings})
        if figures:
            for mode in cfg.modes:
                plotting.estimation_error_figure(result.summary, mode, os.path.join(out_dir, f"fig1_{mode}.svg"))
    return result


def run_trajectory_envelope(cfg: ExperimentConfig, out_dir: str | None = None, figures: bool = True) -> dict:
    """Per-time min/mean/max of ``x_t`` and ``u_t`` over the repeats, per sigma_eta."""
    mode = cfg.mode
    T = int(cfg.envelope_T)
    master = RngStream(cfg.seed)
    envelope, violations, infeasible = {}, 0, 0
    for s in cfg.sigma_eta_grid:
        make = policy_maker(cfg, mode, s)
        xs, us = [], []
        for r in range(cfg.repeats):
            traj, t_fail = run_closed_loop(cfg, mode, s, T, master.child(ENVELOPE_STREAM, r), make)
            if t_fail is not None:
                infeasible += 1
                if traj is None:
                    continue
            violations += count_violations(traj, cfg)
            if t_fail is None:
                xs.append(traj.x[:-1, 0])
                us.append(traj.u[:, 0])
        X, U = np.array(xs), np.array(us)
        e = {
            "x_min": X.min(axis=0), "x_mean": X.mean(axis=0), "x_max": X.max(axis=0),
            "u_min": U.min(axis=0), "u_mean": U.mean(axis=0), "u_max": U.max(axis=0),
        }
        if mode == "lq-tracking":
            g = tracking_target(cfg.tracking_amplitude, cfg.tracking_scale)
            e["target"] = np.array([g(t)[0] for t in range(T)])
        envelope[float(s)] = e
    result = {
        "mode": mode,
        "T": T,
        "repeats": cfg.repeats,
        "violations": violations,
        "infeasible_runs": infeasible,
        "band_width_max": {str(s): {"x": float(np.max(e["x_max"] - e["x_min"])), "u": float(np.max(e["u_max"] - e["u_min"]))}
                           for s, e in envelope.items()},
        "envelope": envelope,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "envelope.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma_eta", "t", "x_min", "x_mean", "x_max", "u_min", "u_mean", "u_max"])
            for s, e in envelope.items():
                for t in range(T):
                    w.writerow([_f(s), t] + [_f(e[k][t]) for k in ("x_min", "x_mean", "x_max", "u_min", "u_mean", "u_max")])
        _write_json(os.path.join(out_dir, "envelope_summary.json"),
                    {k: v for k, v in result.items() if k != "envelope"})
        if figures:
            plotting.envelope_figure(envelope, "x", os.path.join(out_dir, "fig2_x.svg"), limit=float(cfg.X.halfwidth[0]))
            plotting.envelope_figure(envelope, "u", os.path.join(out_dir, "fig2_u.svg"), limit=float(cfg.U.halfwidth[0]))
    return result


def noise_constants(cfg: ExperimentConfig, sigma_eta: float) -> dict:
    """Certified noise constants, small-ball pairs and BMSB parameters."""
    sw, wmax, wbar = certify(cfg.w_dist)
    se, emax, ebar = certify(cfg.eta_dist(sigma_eta))
    sb_w = small_ball(sw, wbar)
    sb_e = small_ball(se, ebar)
    b_z = constraint_bz(cfg.X, cfg.U)
    return {
        "sigma_w": sw, "w_max": wmax, "w_bar": wbar,
        "sigma_eta": se, "eta_max": emax, "eta_bar": ebar,
        "s_w": sb_w.s, "p_w": sb_w.p, "s_eta": sb_e.s, "p_eta": sb_e.p,
        "b_z": b_z, "bmsb": bmsb_params(sb_w, sb_e, b_z),
    }


def run_bound_report(cfg: ExperimentConfig, out_dir: str | None = None, sweep: SweepResult | None = None,
                     sigmas: list[float] | None = None, figures: bool = True) -> dict:
    """Theoretical constants and the explicit bound curve for each sigma_eta."""
    n, m = cfg.true_system.n, cfg.true_system.m
    d = n + m
    per = []
    for s in (sigmas if sigmas is not None else cfg.sigma_eta_grid):
        c = noise_constants(cfg, s)
        bp = c.pop("bmsb")
        sigma_sub = c["w_max"]
        curve = [theorem2_bound(bp, d, n, sigma_sub, cfg.delta, int(T)).to_dict() for T in sorted(cfg.T_grid)]
        poly1, poly2 = theorem1_scaling(c["w_bar"], c["eta_bar"], c["sigma_w"], c["sigma_eta"])
        entry = {
            "sigma_eta": float(s),
            **c,
            "s_z": bp.s_z, "p_z": bp.p_z, "k": bp.k,
            "sigma_sub": sigma_sub,
            "T0": curve[0]["T0"],
            "poly1": poly1, "poly2": poly2,
            "bound_curve": [{"T": b["T"], "bound": b["bound"], "applicable": b["applicable"]} for b in curve],
        }
        if sweep is not None:
            emp = []
            for T in sorted(cfg.T_grid):
                errs = [r["error_raw"] for r in sweep.rows
                        if r["sigma_eta"] == float(s) and r["T"] == T and not r["infeasible"]]
                if errs:
                    emp.append({"T": T, "error": float(max(errs))})
            entry["empirical_max_error"] = emp
        per.append(entry)
    report = {"delta": cfg.delta, "n": n, "m": m, "per_sigma": per}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "bounds.json"), report)
        if figures:
            plotting.bound_figure(report, os.path.join(out_dir, "fig_bounds.svg"))
    return report


def closed_loop(cfg: ExperimentConfig, mode: str, sigma_eta: float) -> ClosedLoop:
    c = noise_constants(cfg, sigma_eta)
    bp = c["bmsb"]
    return ClosedLoop(
        system=cfg.true_system,
        make_policy=policy_maker(cfg, mode, sigma_eta),
        w_dist=cfg.w_dist,
        eta_dist=cfg.eta_dist(sigma_eta),
        x0=np.asarray(cfg.x0, dtype=float),
        s_z=bp.s_z,
        p_z=bp.p_z,
        b_z=bp.b_z,
        s_w=c["s_w"],
        label=f"{mode} sigma_eta={sigma_eta:g}",
    )


def run_bmsb(cfg: ExperimentConfig, mode: str | None = None, sigma_eta: float | None = None,
             out_dir: str | None = None) -> BmsbReport:
    mode = mode or cfg.mode
    s = cfg.bmsb_sigma_eta if sigma_eta is None else sigma_eta
    loop = closed_loop(cfg, mode, s)
    report = verify_bmsb(loop, list(cfg.bmsb_times), cfg.bmsb_L, cfg.bmsb_H, cfg.bmsb_M,
                         RngStream(cfg.seed).child(BMSB_STREAM))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"bmsb_{mode}.json"), "w") as fh:
            fh.write(report.to_json())
        with open(os.path.join(out_dir, f"bmsb_{mode}.csv"), "w", newline="") as fh:
            fh.write(report.to_csv())
    return report


def write_manifest(cfg: ExperimentConfig, out_dir: str, command: str, outputs: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "manifest.json"), {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": f"v{__version__}",
        "outputs": sorted(outputs),
        # the output directory is where results land, not an input to them
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
    })


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")

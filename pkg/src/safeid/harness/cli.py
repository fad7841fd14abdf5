"""Command-line entry point: ``safeid {sweep,envelope,bounds,bmsb,demo}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from safeid.harness.config import ConfigError, ExperimentConfig
from safeid.harness import experiments as ex
from safeid.model import PolicyError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; omitted keys take defaults")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("lqr-regulation", "lq-tracking", "linear-baseline"))
    p.add_argument("--sigma-eta", type=float, nargs="+", dest="sigma_eta", help="excitation level(s)")
    p.add_argument("--T", type=int, nargs="+", dest="T", help="trajectory length(s)")
    p.add_argument("--repeats", type=int, help="seeds per cell")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="safeid", description="Closed-loop identification under safe policies")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("sweep", "estimation error over (sigma_eta, T, seed)"),
        ("envelope", "state/input envelopes of the tracking controller"),
        ("bounds", "theoretical constants and the explicit error bound"),
        ("bmsb", "Monte-Carlo check of the small-ball condition"),
        ("demo", "small end-to-end run with a summary table"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "bmsb":
            p.add_argument("--M", type=int, help="inner samples per (history, time)")
            p.add_argument("--H", type=int, help="number of histories")
            p.add_argument("--L", type=int, help="number of directions")
            p.add_argument("--times", type=int, nargs="+", help="conditioning times")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.command == "demo" and not args.config:
        cfg = demo_config(cfg)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.mode is not None:
        changes["mode"] = args.mode
        changes["modes"] = [args.mode]
    if args.sigma_eta is not None:
        changes["sigma_eta_grid"] = args.sigma_eta
        changes["bmsb_sigma_eta"] = args.sigma_eta[0]
    if args.T is not None:
        changes["T_grid"] = args.T
        changes["envelope_T"] = max(args.T)
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if args.command == "bmsb":
        for k in ("M", "H", "L"):
            if getattr(args, k) is not None:
                changes[f"bmsb_{k}"] = getattr(args, k)
        if args.times is not None:
            changes["bmsb_times"] = args.times
    cfg = dataclasses.replace(cfg, **changes)
    return cfg.validate()


def demo_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(cfg, sigma_eta_grid=[0.2, 0.8], T_grid=[250, 500, 1000], repeats=3, envelope_T=300,
                               out="")


def run_demo(cfg: ExperimentConfig, out_dir: str | None) -> str:
    sweep = ex.run_estimation_sweep(cfg, out_dir)
    bounds = ex.run_bound_report(cfg, out_dir, sweep=sweep)
    lines = [
        f"safeid demo  seed={cfg.seed}  config={cfg.config_hash()}",
        f"modes={','.join(cfg.modes)}  sigma_eta={cfg.sigma_eta_grid}  T={cfg.T_grid}  repeats={cfg.repeats}",
        "",
        f"{'mode':<16}{'sigma_eta':>10}{'T':>7}{'mean err':>12}{'std':>11}{'raw mean':>12}",
    ]
    for c in sweep.summary["cells"]:
        lines.append(f"{c['mode']:<16}{c['sigma_eta']:>10.2f}{c['T']:>7d}{c['error_proj_mean']:>12.5f}"
                     f"{c['error_proj_std']:>11.5f}{c['error_raw_mean']:>12.5f}")
    lines.append("")
    lines.append(f"constraint violations: {sweep.summary['total_violations']}   "
                 f"infeasible rows: {sweep.summary['infeasible_rows']}   "
                 f"max |z_t|: {sweep.summary['max_bz_realized']:.4f}")
    lines.append("")
    lines.append(f"{'sigma_eta':>10}{'s_z':>13}{'p_z':>9}{'T0':>13}{'bound@Tmax':>13}")
    for e in bounds["per_sigma"]:
        lines.append(f"{e['sigma_eta']:>10.2f}{e['s_z']:>13.4e}{e['p_z']:>9.4f}{e['T0']:>13.1f}"
                     f"{e['bound_curve'][-1]['bound']:>13.4g}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"safeid: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = cfg.out or None
    try:
        if args.command == "sweep":
            res = ex.run_estimation_sweep(cfg, out)
            files = ["results.csv", "summary.json", "timing.json"] + [f"fig1_{m}.svg" for m in cfg.modes]
            s = res.summary
            print(f"{s['total_rows']} rows, {s['total_violations']} constraint violations, "
                  f"{s['infeasible_rows']} infeasible rows")
        elif args.command == "envelope":
            res = ex.run_trajectory_envelope(cfg, out)
            files = ["envelope.csv", "envelope_summary.json", "fig2_x.svg", "fig2_u.svg"]
            print(f"envelope {res['mode']}: {res['violations']} constraint violations, "
                  f"{res['infeasible_runs']} infeasible runs")
        elif args.command == "bounds":
            res = ex.run_bound_report(cfg, out)
            files = ["bounds.json", "fig_bounds.svg"]
            for e in res["per_sigma"]:
                print(f"sigma_eta={e['sigma_eta']:g}  s_z={e['s_z']:.4e}  p_z={e['p_z']:.4f}  T0={e['T0']:.1f}")
        elif args.command == "bmsb":
            rep = ex.run_bmsb(cfg, cfg.mode, cfg.bmsb_sigma_eta, out)
            files = [f"bmsb_{cfg.mode}.json", f"bmsb_{cfg.mode}.csv"]
            print(f"{rep.label}: min probability {rep.min_probability:.4f} vs threshold {rep.threshold:.4f} "
                  f"-> {'pass' if rep.passed else 'FAIL'}")
        else:
            print(run_demo(cfg, out), end="")
            files = ["results.csv", "summary.json", "timing.json", "bounds.json", "fig_bounds.svg"] + [
                f"fig1_{m}.svg" for m in cfg.modes]
    except PolicyError as exc:
        print(f"safeid: policy failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if out is not None:
        ex.write_manifest(cfg, out, args.command, [f for f in files if os.path.exists(os.path.join(out, f))])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Static SVG figures for the experiment reports.

Output is byte-reproducible: the SVG hash salt is fixed and the date
metadata dropped.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "safeid",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    "lines.linewidth": 1.2,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def estimation_error_figure(summary: dict, mode: str, path, bounds: dict | None = None) -> None:
    """Mean projected error against T with a one-standard-deviation band per sigma_eta."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cells = [c for c in summary["cells"] if c["mode"] == mode]
        sigmas = sorted({c["sigma_eta"] for c in cells})
        colors = plt.cm.viridis(np.linspace(0.1, 0.85, max(len(sigmas), 1)))
        for color, s in zip(colors, sigmas):
            rows = sorted((c for c in cells if c["sigma_eta"] == s), key=lambda c: c["T"])
            T = np.array([c["T"] for c in rows], dtype=float)
            mean = np.array([c["error_proj_mean"] for c in rows])
            std = np.array([c["error_proj_std"] for c in rows])
            ax.plot(T, mean, color=color, label=rf"$\sigma_\eta={s:g}$")
            ax.fill_between(T, np.maximum(mean - std, 1e-12), mean + std, color=color, alpha=0.2, linewidth=0)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("trajectory length T")
        ax.set_ylabel(r"$\|\tilde\theta-\theta_*\|_2$")
        ax.set_title(mode)
        ax.legend(frameon=False)
        _save(fig, path)


def envelope_figure(envelope: dict, var: str, path, limit: float | None = None) -> None:
    """Mean trajectory with the min-max band over seeds, one colour per sigma_eta."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        sigmas = sorted(envelope)
        colors = plt.cm.viridis(np.linspace(0.1, 0.85, max(len(sigmas), 1)))
        for color, s in zip(colors, sigmas):
            e = envelope[s]
            t = np.arange(len(e[f"{var}_mean"]))
            ax.fill_between(t, e[f"{var}_min"], e[f"{var}_max"], color=color, alpha=0.25, linewidth=0)
            ax.plot(t, e[f"{var}_mean"], color=color, label=rf"$\sigma_\eta={s:g}$")
        if limit is not None:
            for y in (-limit, limit):
                ax.axhline(y, color="0.3", linestyle="--", linewidth=0.8)
        if "target" in envelope[sigmas[0]] and var == "x":
            g = envelope[sigmas[0]]["target"]
            ax.plot(np.arange(len(g)), g, color="0.5", linestyle=":", label="target")
        ax.set_xlabel("t")
        ax.set_ylabel(f"${var}_t$")
        ax.legend(frameon=False, ncol=2)
        _save(fig, path)


def bound_figure(report: dict, path) -> None:
    """Explicit error bound against T, with the largest observed error when available."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        entries = report["per_sigma"]
        colors = plt.cm.viridis(np.linspace(0.1, 0.85, max(len(entries), 1)))
        for color, e in zip(colors, entries):
            T = np.array([b["T"] for b in e["bound_curve"]], dtype=float)
            ax.plot(T, [b["bound"] for b in e["bound_curve"]], color=color, label=rf"bound, $\sigma_\eta={e['sigma_eta']:g}$")
            emp = e.get("empirical_max_error")
            if emp:
                ax.plot([p["T"] for p in emp], [p["error"] for p in emp], color=color, marker="o", linestyle="none",
                        markersize=3)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("trajectory length T")
        ax.set_ylabel("estimation error")
        ax.legend(frameon=False)
        _save(fig, path)

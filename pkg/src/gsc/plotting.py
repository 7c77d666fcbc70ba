"""Figures written next to the delimited reports.

Everything renders through the Agg backend straight to files; nothing here
opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .coarsening import CoarsePlan  # noqa: E402
from .driver import BoundReport, format_gap  # noqa: E402
from .model import SupplyChainInstance  # noqa: E402
from .sampling import EdgeSample  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

LB_COLOR = "tab:blue"
UB_COLOR = "tab:red"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def _ci(x):
    return 0.0 if x is None or not np.isfinite(x) else x


def plot_bounds(report: BoundReport, path) -> Path:
    """Best and mean bounds per level with 95% intervals; gap annotated."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        lv = report.levels
        x = np.arange(1, len(lv) + 1)
        off = 0.08
        ax.errorbar(x - off, [l.lower.mean for l in lv], yerr=[_ci(l.lower.ci95) for l in lv],
                    fmt="o", color=LB_COLOR, mfc="white", capsize=3, label="lower bound (mean, 95% CI)")
        ax.errorbar(x + off, [l.upper.mean for l in lv], yerr=[_ci(l.upper.ci95) for l in lv],
                    fmt="s", color=UB_COLOR, mfc="white", capsize=3, label="upper bound (mean, 95% CI)")
        ax.plot(x, [l.best_lb for l in lv], "-", color=LB_COLOR, marker="o", label="best lower bound")
        ax.plot(x, [l.best_ub for l in lv], "-", color=UB_COLOR, marker="s", label="best upper bound")
        for xi, l in zip(x, lv):
            ax.annotate(f"gap {format_gap(l.gap)}", (xi, 0.5 * (l.best_lb + l.best_ub)), textcoords="offset points",
                        xytext=(6, 0), ha="left", va="center", fontsize=7)
        ax.set_xticks(x)
        ax.set_xticklabels([f"{l.level}\n{l.spec.edges} edges\nC={l.spec.partitions}" for l in lv])
        ax.set_xlabel("level")
        ax.set_ylabel("total welfare")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        return _save(fig, path)


def plot_gap(report: BoundReport, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        lv = report.levels
        x = np.arange(1, len(lv) + 1)
        ax.plot(x, [l.gap for l in lv], "-o", color="k", label="running gap")
        ax.plot(x, [l.level_gap for l in lv], "--", color="0.5", marker=".", label="level gap")
        ax.set_xticks(x)
        ax.set_xlabel("level")
        ax.set_ylabel("optimality gap (%)")
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_draws(report: BoundReport, path) -> Path:
    """Scatter of every draw's bound by level."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        for l in report.levels:
            lw = l.lower.welfares
            uw = l.upper.welfares
            ax.scatter(np.full(len(lw), l.level - 0.08), lw, s=10, color=LB_COLOR, alpha=0.7)
            ax.scatter(np.full(len(uw), l.level + 0.08), uw, s=10, color=UB_COLOR, alpha=0.7, marker="s")
        ax.set_xticks([l.level for l in report.levels])
        ax.set_xlabel("level")
        ax.set_ylabel("welfare per draw")
        return _save(fig, path)


def _draw_nodes(ax, inst, colors="0.3", size=18):
    xy = inst.coords
    ax.scatter(xy[:, 0], xy[:, 1], s=size, c=colors, zorder=3, edgecolors="none")
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_sample(inst: SupplyChainInstance, sample: EdgeSample, path) -> Path:
    """Active edges in blue over the removed ones in light grey."""
    xy = inst.coords
    ea = inst.edge_arrays
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        for ids, color, lw in ((sample.removed, "0.85", 0.4), (sample.active, LB_COLOR, 1.0)):
            for e in ids:
                s, d = ea["src"][e], ea["dst"][e]
                ax.plot([xy[s, 0], xy[d, 0]], [xy[s, 1], xy[d, 1]], color=color, lw=lw, zorder=1)
        _draw_nodes(ax, inst)
        ax.set_title(f"{sample.size} active of {inst.n_edges} edges")
        return _save(fig, path)


def plot_plan(inst: SupplyChainInstance, plan: CoarsePlan, path) -> Path:
    """Partitions coloured around their pivots, aggregated edges between pivots."""
    xy = inst.coords
    cmap = plt.get_cmap("tab20")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        colors = [cmap(c % 20) for c in plan.partition_of]
        piv = np.asarray(plan.pivots)
        seen = set()
        for e in plan.agg_edges:
            pair = (min(e.src_part, e.dst_part), max(e.src_part, e.dst_part))
            if pair in seen:
                continue
            seen.add(pair)
            a, b = xy[piv[pair[0]]], xy[piv[pair[1]]]
            ax.plot([a[0], b[0]], [a[1], b[1]], color="0.4", lw=0.8, zorder=1)
        _draw_nodes(ax, inst, colors=colors, size=14)
        ax.scatter(xy[piv, 0], xy[piv, 1], s=70, c=[cmap(i % 20) for i in range(len(piv))],
                   edgecolors="k", linewidths=0.8, zorder=4)
        ax.set_title(f"C={plan.n_partitions} partitions, K={plan.n_agg_edges} edges")
        return _save(fig, path)


def report_figures(report: BoundReport, directory) -> dict[str, Path]:
    out = Path(directory)
    return {
        "bounds": plot_bounds(report, out / "bounds.png"),
        "gap": plot_gap(report, out / "gap.png"),
        "draws": plot_draws(report, out / "draws.png"),
    }

"""Report figures rendered to files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

METHOD_COLORS = {
    "mob": "#1b6ca8",
    "mars": "#2a9d8f",
    "prim": "#e76f51",
    "aim": "#8a5a44",
    "segmented": "#6c757d",
    "gamci": "#b5838d",
    "reference": "#222222",
}


def _color(method: str) -> str:
    return METHOD_COLORS.get(method, "#555555")


def plot_fscore_summary(summary: pd.DataFrame, path: Path) -> None:
    """Mean F-score with 95% band per method, panelled by (rho, p)."""
    rhos = sorted(summary["rho"].unique())
    ps = sorted(summary["p"].unique())
    fig, axes = plt.subplots(
        len(rhos), len(ps), figsize=(3.2 * len(ps), 2.8 * len(rhos)), squeeze=False, sharey=True
    )
    for i, rho in enumerate(rhos):
        for j, p in enumerate(ps):
            ax = axes[i][j]
            cell = summary[(summary["rho"] == rho) & (summary["p"] == p)]
            for method, grp in cell.groupby("method"):
                grp = grp.sort_values("beta2")
                pct = 100.0 * grp["beta2"]
                ax.plot(pct, grp["f_mean"], marker="o", ms=3, label=method, color=_color(method))
                ax.fill_between(pct, grp["f_lo"], grp["f_hi"], alpha=0.15, color=_color(method))
            ax.set_title(f"p={p}, rho={rho}", fontsize=9)
            ax.set_ylim(-0.02, 1.02)
            if i == len(rhos) - 1:
                ax.set_xlabel("slope increase above threshold (%)")
            if j == 0:
                ax.set_ylabel("F-score")
    axes[0][0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_peeling_trajectory(traj: pd.DataFrame, path: Path) -> None:
    """Slope and slope-increase rate against box support."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.plot(100.0 * traj["support"], traj["slope"], marker=".", color="#1b6ca8")
    ax1.invert_xaxis()
    ax1.set_xlabel("support (%)")
    ax1.set_ylabel("in-box slope")
    sub = traj[traj["rate"].notna()]
    ax2.plot(100.0 * sub["support"], sub["rate"], marker=".", color="#e76f51")
    ax2.invert_xaxis()
    ax2.set_xlabel("support (%)")
    ax2.set_ylabel("slope increase rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cutpoint_scores(scores: pd.DataFrame, path: Path) -> None:
    """Sensitivity, precision and F-score against the event cut point."""
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2), sharex=True)
    panels = [("sensitivity", "Sensitivity"), ("precision", "Precision"), ("f_score", "F-score")]
    for ax, (col, title) in zip(axes, panels):
        for method, grp in scores.groupby("method"):
            grp = grp.sort_values("cutpoint")
            ax.plot(grp["cutpoint"], grp[col], marker="o", ms=3, label=method, color=_color(method))
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("excess-count cut point (%)")
        ax.set_ylim(-0.02, 1.02)
    axes[0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bootstrap_thresholds(raw: pd.DataFrame, path: Path) -> None:
    """Per method and variable: threshold spread and non-selection share."""
    variables = sorted(raw["variable"].unique())
    methods = sorted(raw["method"].unique())
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 0.6 + 0.8 * len(variables) * len(methods)))
    labels, data, nosel = [], [], []
    for var in variables:
        for method in methods:
            sub = raw[(raw["variable"] == var) & (raw["method"] == method)]
            ok = sub[sub["status"] == "ok"]
            vals = ok["threshold"].dropna().to_numpy()
            labels.append(f"{var}/{method}")
            data.append(vals if vals.size else np.array([np.nan]))
            nosel.append(1.0 - len(ok["threshold"].dropna()) / max(len(sub), 1))
    axes[0].boxplot(data, orientation="horizontal", tick_labels=labels)
    axes[0].set_xlabel("bootstrap threshold")
    axes[1].barh(np.arange(len(labels)), nosel, color="#6c757d")
    axes[1].set_yticks(np.arange(len(labels)), labels)
    axes[1].set_xlim(0, 1)
    axes[1].set_xlabel("share not selected / failed")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_exposure_curves(curves, path: Path) -> None:
    """Relative response curves with pointwise bounds and chosen thresholds."""
    fig, axes = plt.subplots(1, len(curves), figsize=(4.0 * len(curves), 3.2), squeeze=False)
    for ax, c in zip(axes[0], curves):
        ax.plot(c.grid, c.estimate, color="#1b6ca8")
        ax.fill_between(c.grid, c.lower, c.upper, alpha=0.2, color="#1b6ca8")
        ax.axhline(0.0, color="#999999", lw=0.8)
        ax.axvline(c.mmt, color="#2a9d8f", lw=0.8, ls="--")
        if c.threshold is not None:
            ax.axvline(c.threshold, color="#e76f51", lw=1.2)
        ax.set_title(c.name, fontsize=10)
        ax.set_xlabel(c.name)
        ax.set_ylabel("relative response")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

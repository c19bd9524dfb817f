"""Figure rendering for CLI reports.

Each renderer takes rows already written to a CSV and draws the matching
PNG next to it, so the delimited output stays the primary artifact.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_REP_STYLE = {"msdf": "o-", "dense_grid": "s--", "triplane": "^:"}


def render_sweep_figure(rows, out_png: str) -> None:
    """Chamfer vs parameter budget, one line per representation (median
    over meshes when several share a budget)."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    reps = sorted({r.representation for r in rows})
    for rep in reps:
        budgets = sorted({r.budget for r in rows if r.representation == rep})
        med = [np.median([r.chamfer for r in rows
                          if r.representation == rep and r.budget == b and
                          np.isfinite(r.chamfer)])
               for b in budgets]
        ax.loglog(budgets, med, _REP_STYLE.get(rep, "x-"), label=rep)
    ax.set_xlabel("parameter budget")
    ax.set_ylabel("Chamfer distance")
    ax.set_title("approximation quality vs parameter budget")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_fit_figure(shape_ids, chamfers, seconds, out_png: str) -> None:
    """Per-shape fit quality and cost bars."""
    pos = np.arange(len(shape_ids))
    fig, axes = plt.subplots(1, 2, figsize=(max(7, 1.1 * len(shape_ids) + 4), 4))
    axes[0].bar(pos, chamfers, color="tab:blue")
    axes[0].set_ylabel("Chamfer distance")
    axes[0].set_yscale("log")
    axes[1].bar(pos, seconds, color="tab:orange")
    axes[1].set_ylabel("fit seconds")
    for ax in axes:
        ax.set_xticks(pos)
        ax.set_xticklabels(shape_ids, rotation=45, ha="right", fontsize=8)
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle("per-shape fit")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_loss_figure(losses, out_png: str, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(losses, lw=0.8)
    if len(losses) >= 20:
        w = max(len(losses) // 50, 5)
        smooth = np.convolve(losses, np.ones(w) / w, mode="valid")
        ax.plot(np.arange(len(smooth)) + w - 1, smooth, lw=1.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_metrics_figure(metrics, out_png: str) -> None:
    """Bars for the three distribution metrics of one evaluation run."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 4))
    axes[0].bar(["coverage", "1-NNA"], [metrics.coverage, metrics.one_nna],
                color=["tab:blue", "tab:green"])
    axes[0].axhline(0.5, color="gray", ls="--", lw=0.8)
    axes[0].set_ylim(0, 1.05)
    axes[0].set_title("fractions (1-NNA ideal 0.5)")
    axes[1].bar(["MMD"], [metrics.mmd], color="tab:orange")
    axes[1].set_title(f"MMD ({metrics.distance_kind})")
    for ax in axes:
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle(f"{metrics.num_generated} generated vs "
                 f"{metrics.num_reference} reference")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)

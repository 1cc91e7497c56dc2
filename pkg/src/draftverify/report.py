"""Figure rendering for sweep outputs, written alongside the delimited exports."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import ConfigSummary  # noqa: E402


def save_pareto_figure(summaries: Sequence[ConfigSummary],
                       frontier: Sequence[ConfigSummary], path: str,
                       cost_key: str = "weighted_cost",
                       quality_key: str = "exact_match") -> None:
    """Quality-versus-cost scatter with the non-dominated set traced out."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    xs = [getattr(s, cost_key) for s in summaries]
    ys = [getattr(s, quality_key) for s in summaries]
    ax.scatter(xs, ys, s=28, color="#9aa0a6", label="all configs", zorder=2)
    for s in summaries:
        ax.annotate(s.config_id, (getattr(s, cost_key), getattr(s, quality_key)),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
    front = sorted(frontier, key=lambda s: getattr(s, cost_key))
    ax.plot([getattr(s, cost_key) for s in front],
            [getattr(s, quality_key) for s in front],
            marker="o", color="#d9541e", label="Pareto frontier", zorder=3)
    ax.set_xlabel(f"mean {cost_key.replace('_', ' ')}")
    ax.set_ylabel(f"mean {quality_key.replace('_', ' ')}")
    ax.set_title("Quality vs model-call cost")
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_nfe_figure(summaries: Sequence[ConfigSummary], path: str) -> None:
    """Drafter/verifier forward-pass breakdown per configuration."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    labels = [s.config_id for s in summaries]
    drafter = [s.drafter_nfe for s in summaries]
    verifier = [s.verifier_nfe for s in summaries]
    xs = range(len(summaries))
    ax.bar(xs, drafter, width=0.6, label="drafter passes", color="#4c72b0")
    ax.bar(xs, verifier, width=0.6, bottom=drafter, label="verifier passes",
           color="#dd8452")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("mean forward passes per task")
    ax.set_title("Model-call budget by configuration")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

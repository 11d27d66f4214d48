"""Matplotlib figures for campaign reports, rendered to files.

Imported lazily by the CLI so plain tabular reporting stays fast. All
figures are derived from the summary record, one PNG per aspect.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

FIGSIZE = (6.0, 3.6)
DPI = 130

OUTCOME_COLORS = {
    "done": "#4C9F70",
    "failed_oom": "#C84B4B",
    "abandoned": "#D9A441",
    "skipped_storage": "#8C8C8C",
}


def _bar_axes(title: str):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.set_title(title, fontsize=11)
    ax.grid(axis="y", alpha=0.3, linewidth=0.5)
    ax.set_axisbelow(True)
    return fig, ax


def cost_figure(summary: dict, path: Path) -> Path | None:
    cost = summary.get("cost")
    if not cost:
        return None
    items = cost.get("line_items", [])
    labels = [item["label"] for item in items]
    values = [item["usd"] for item in items]
    fig, ax = _bar_axes(f"Campaign cost: {cost['total_usd']:.2f} USD")
    ax.barh(range(len(items)), values, color="#4878A8")
    ax.set_yticks(range(len(items)), labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("USD")
    for i, v in enumerate(values):
        ax.text(v, i, f" {v:.2f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def stage_share_figure(summary: dict, path: Path) -> Path | None:
    shares = summary.get("stage_shares")
    if not shares:
        return None
    stages = list(shares)
    values = [shares[s] * 100.0 for s in stages]
    fig, ax = _bar_axes("Busy-time share by pipeline stage")
    ax.bar(stages, values, color=["#7FA8C9", "#9BBF8A", "#C9856B", "#B0A1C9"][: len(stages)])
    ax.set_ylabel("% of per-file busy time")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.1f}%", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def outcome_figure(summary: dict, path: Path) -> Path | None:
    counts = summary.get("outcome_counts")
    if not counts:
        return None
    outcomes = list(counts)
    values = [counts[o] for o in outcomes]
    colors = [OUTCOME_COLORS.get(o, "#777777") for o in outcomes]
    fig, ax = _bar_axes(f"File outcomes ({sum(values)} files)")
    ax.bar(outcomes, values, color=colors)
    ax.set_ylabel("files")
    if min(values) > 0 and max(values) / min(values) > 200:
        ax.set_yscale("log")
    for i, v in enumerate(values):
        ax.text(i, v, str(v), ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def render_figures(summary: dict, out_dir: str | Path, stem: str = "report") -> list[Path]:
    """Render every applicable figure; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, renderer in (
        ("cost", cost_figure),
        ("stages", stage_share_figure),
        ("outcomes", outcome_figure),
    ):
        result = renderer(summary, out_dir / f"{stem}_{name}.png")
        if result is not None:
            written.append(result)
    return written

"""Static figures for reports: error against a sweep axis, confusion heatmaps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import ExperimentReport  # noqa: E402


def _axis_value(report: ExperimentReport, axis: str):
    cfg = report.config
    if axis.startswith("features."):
        return (cfg.get("features") or {}).get("params", {}).get(axis.split(".", 1)[1])
    value = cfg.get(axis)
    if isinstance(value, list):
        return "{" + ",".join(str(v) for v in value) + "}"
    return value


def guess_axis(reports: Sequence[ExperimentReport]) -> str | None:
    """First config field whose value differs between reports."""
    if len(reports) < 2:
        return None
    for key in ("n", "k_e", "input_gain", "rho", "density", "aggregate", "mode", "features"):
        vals = [repr(r.config.get(key)) for r in reports]
        if len(set(vals)) > 1:
            return key
    return None


def plot_sweep(reports: Sequence[ExperimentReport], axis: str, path) -> Path:
    """Mean test error (with seed std as error bars) against ``axis``."""
    xs = [_axis_value(r, axis) for r in reports]
    means = np.array([100 * r.mean_error for r in reports])
    stds = np.array([100 * r.std_error for r in reports])
    numeric = all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in xs)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    pos = np.asarray(xs, dtype=float) if numeric else np.arange(len(xs))
    ax.errorbar(pos, means, yerr=stds, marker="o", capsize=3)
    if not numeric:
        ax.set_xticks(pos)
        ax.set_xticklabels([str(x) for x in xs], rotation=30, ha="right")
    ax.set_xlabel(axis)
    ax.set_ylabel("test error (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_confusion(report: ExperimentReport, path, seed_index: int | None = None) -> Path:
    """Heatmap of the confusion counts, summed over seeds unless one is picked."""
    cms = np.asarray(report.confusion)
    cm = cms.sum(axis=0) if seed_index is None else cms[seed_index]
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    # log scale keeps the off-diagonal structure visible next to the diagonal
    im = ax.imshow(np.log1p(cm), cmap="viridis")
    ax.set_xticks(range(10))
    ax.set_yticks(range(10))
    ax.set_xlabel("predicted digit")
    ax.set_ylabel("true digit")
    ax.set_title(report.config.get("label") or report.config.get("mode", ""))
    fig.colorbar(im, ax=ax, label="log(1 + count)")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_figures(reports: Sequence[ExperimentReport], out_dir, stem: str = "report",
                   axis: str | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    axis = axis or guess_axis(reports)
    if axis is not None:
        paths.append(plot_sweep(reports, axis, out_dir / f"{stem}_error_vs_{axis}.png"))
    for i, r in enumerate(reports):
        paths.append(plot_confusion(r, out_dir / f"{stem}_confusion_{i}.png"))
    return paths

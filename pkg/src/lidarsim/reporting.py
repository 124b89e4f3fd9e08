"""Evaluation report files: delimited series, JSON summaries, and figures.

Every metric report writes three artifacts side by side into the output
directory: `<name>_series.csv` (t, error rows), `<name>_summary.json`
(the statistics block plus provenance), and `<name>_series.png`. Trajectory
overlays (reference vs. estimate, top-down) render to `<name>_overlay.png`.
Batch evaluations additionally get one `summary.csv` table row per
(sequence, estimate) pair.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluator import EvaluationError, MetricResult, Trajectory

_STAT_KEYS = ("rmse", "mean", "median", "std", "min", "max")


def format_stats(stats) -> str:
    return "  ".join(f"{k} {getattr(stats, k):.6f}" for k in _STAT_KEYS)


def write_series_csv(result: MetricResult, path: Path):
    with open(path, "w") as fh:
        fh.write("t,error\n")
        for t, e in zip(result.t, result.errors):
            fh.write(f"{t:.9f},{e:.9f}\n")


def write_summary_json(result: MetricResult, path: Path, extra: dict | None = None):
    doc = {
        "metric": result.metric,
        "align": result.align,
        "samples": int(len(result.errors)),
        "stats": result.stats.as_dict(),
    }
    if result.transform is not None:
        doc["alignment_transform"] = {
            "rotation_wxyz": [float(v) for v in result.transform.rotation],
            "translation": [float(v) for v in result.transform.translation],
            "scale": result.transform.scale,
        }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def plot_error_series(result: MetricResult, path: Path, title: str | None = None):
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(result.t, result.errors, lw=0.8)
    ax.axhline(result.stats.rmse, color="tab:red", ls="--", lw=0.8,
               label=f"rmse {result.stats.rmse:.4f} m")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(f"{result.metric} [m]")
    ax.set_title(title or result.metric.upper())
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_trajectory_overlay(ref: Trajectory, est: Trajectory, path: Path,
                            est_aligned: np.ndarray | None = None):
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(ref.pos[:, 0], ref.pos[:, 1], "k--", lw=1.2, label="reference")
    ax.plot(est.pos[:, 0], est.pos[:, 1], lw=1.0, label="estimate")
    if est_aligned is not None:
        ax.plot(est_aligned[:, 0], est_aligned[:, 1], lw=1.0, label="estimate (aligned)")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_metric_report(
    result: MetricResult,
    out_dir: str | Path,
    name: str | None = None,
    ref: Trajectory | None = None,
    est: Trajectory | None = None,
    extra: dict | None = None,
) -> dict:
    """Write the full artifact set for one metric result; returns the paths."""
    if len(result.errors) == 0:
        raise EvaluationError("refusing to report an empty result")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or result.metric
    paths = {
        "series_csv": out / f"{name}_series.csv",
        "summary_json": out / f"{name}_summary.json",
        "series_png": out / f"{name}_series.png",
    }
    write_series_csv(result, paths["series_csv"])
    write_summary_json(result, paths["summary_json"], extra)
    plot_error_series(result, paths["series_png"])
    if ref is not None and est is not None:
        paths["overlay_png"] = out / f"{name}_overlay.png"
        aligned = result.transform.apply(est.pos) if result.transform is not None else None
        plot_trajectory_overlay(ref, est, paths["overlay_png"], aligned)
    return paths


def write_batch_table(rows: list[dict], path: Path):
    """One summary row per evaluated estimate (sequence, estimate, stats...)."""
    if not rows:
        raise EvaluationError("refusing to write an empty batch table")
    cols = ["sequence", "estimate", "metric", "align", "samples", *_STAT_KEYS]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row.get(c, "")) for c in cols) + "\n")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def plot_normal_error_series(t: np.ndarray, frame_error: np.ndarray, path: Path):
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, frame_error, lw=0.9)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("summed normal error per frame")
    ax.set_title("plane-normal registration error")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

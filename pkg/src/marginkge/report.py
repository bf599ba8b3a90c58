"""Heatmaps, CSV tables and the text summary of a sweep."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

import numpy as np  # noqa: E402

from .stats import LP_METRICS, correlate_sweep, format_coefficient  # noqa: E402
from .sweep import LOWER_IS_BETTER, METRICS, SweepGrid, write_cells_csv  # noqa: E402

LIGHTEST, DARKEST = 0.95, 0.30
METRIC_TITLES = {
    "mrr": "MRR",
    "mrr_r": "MRR$_r$",
    "cls_acc": "Classifier accuracy",
    "mr": "Mean rank",
    "hits1": "Hits@1",
    "hits3": "Hits@3",
    "hits10": "Hits@10",
}
# matplotlib embeds a random id and a date in SVGs unless these are pinned
_SVG_RC = {"svg.hashsalt": "marginkge", "svg.fonttype": "none"}
_SVG_META = {"Date": None, "Creator": None}


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; valid names: {', '.join(METRICS)}")


def metric_matrix(grid: SweepGrid, metric: str) -> np.ndarray:
    """margins x dims matrix; missing or failed cells are NaN."""
    _check_metric(metric)
    m = np.full((len(grid.margins), len(grid.dims)), np.nan)
    for i, g in enumerate(grid.margins):
        for j, k in enumerate(grid.dims):
            cell = grid.get(g, k)
            if cell is not None and cell.complete:
                m[i, j] = cell.value(metric)
    return m


def column_shades(matrix: np.ndarray, lower_is_better: bool = False) -> np.ndarray:
    """Per-column quality in [0, 1]: 0 for the worst value, 1 for the best.

    A column with a single distinct finite value maps to 0.5; NaNs stay NaN.
    """
    out = np.full(matrix.shape, np.nan)
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        ok = np.isfinite(col)
        if not ok.any():
            continue
        lo, hi = col[ok].min(), col[ok].max()
        if hi == lo:
            out[ok, j] = 0.5
            continue
        frac = (col[ok] - lo) / (hi - lo)
        out[ok, j] = 1.0 - frac if lower_is_better else frac
    return out


def grey_level(shade: float) -> float:
    return (1.0 - shade) * LIGHTEST + shade * DARKEST


def best_rows(matrix: np.ndarray, lower_is_better: bool = False) -> list[int | None]:
    """Row index of the best value in each column (first on ties)."""
    out = []
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        if not np.isfinite(col).any():
            out.append(None)
            continue
        filled = np.where(np.isfinite(col), col, np.inf if lower_is_better else -np.inf)
        out.append(int(np.argmin(filled) if lower_is_better else np.argmax(filled)))
    return out


def _label(v: float) -> str:
    return f"{v:g}"


def write_matrix_csv(grid: SweepGrid, metric: str, path) -> np.ndarray:
    m = metric_matrix(grid, metric)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma"] + [f"k={k}" for k in grid.dims])
        for g, row in zip(grid.margins, m):
            w.writerow([_label(g)] + ["" if math.isnan(v) else repr(float(v)) for v in row])
    return m


def emit_heatmap(grid: SweepGrid, metric: str, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (margins x dims) and ``<path>.svg``.

    Fills run from light grey (worst) to dark grey (best) within each
    column; the best cell of every column is outlined.
    """
    _check_metric(metric)
    if not grid.cells:
        raise ValueError("grid is empty")
    path = Path(path)
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    m = write_matrix_csv(grid, metric, csv_path)
    low = metric in LOWER_IS_BETTER
    shades = column_shades(m, low)
    best = best_rows(m, low)

    n_rows, n_cols = m.shape
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * n_cols, 0.9 + 0.42 * n_rows))
        for i in range(n_rows):
            for j in range(n_cols):
                y = n_rows - 1 - i
                if math.isnan(m[i, j]):
                    ax.add_patch(Rectangle((j, y), 1, 1, facecolor="white", edgecolor="0.8", hatch="//"))
                    ax.text(j + 0.5, y + 0.5, "n/a", ha="center", va="center", fontsize=8, color="0.4")
                    continue
                level = grey_level(shades[i, j])
                ax.add_patch(Rectangle((j, y), 1, 1, facecolor=str(round(level, 4)), edgecolor="white"))
                txt = f"{m[i, j]:.2f}" if metric == "mr" else f"{m[i, j]:.3f}"
                ax.text(j + 0.5, y + 0.5, txt, ha="center", va="center", fontsize=8,
                        color="white" if level < 0.6 else "black")
        for j, i in enumerate(best):
            if i is not None:
                ax.add_patch(Rectangle((j + 0.04, n_rows - 1 - i + 0.06), 0.92, 0.88, fill=False,
                                       edgecolor="black", linewidth=1.6))
        ax.set_xlim(0, n_cols)
        ax.set_ylim(0, n_rows)
        ax.set_xticks([j + 0.5 for j in range(n_cols)])
        ax.set_xticklabels([f"k={k}" for k in grid.dims])
        ax.set_yticks([n_rows - 1 - i + 0.5 for i in range(n_rows)])
        ax.set_yticklabels([_label(g) for g in grid.margins])
        ax.set_ylabel("margin")
        ax.set_title(f"{grid.label}: {METRIC_TITLES[metric]}", fontsize=9)
        ax.tick_params(length=0)
        for spine in ax.spines.values():
            spine.set_visible(False)
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata=_SVG_META)
        plt.close(fig)
    return csv_path, svg_path


def write_correlations_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "k", "metric", "pearson", "spearman", "n", "note"])
        for r in rows:
            metric = "MRR" if r.metric == "mrr" else "MRR_r"
            w.writerow([r.dataset, r.k, metric, _coef_csv(r.pearson), _coef_csv(r.spearman), r.n, r.reason])


def _coef_csv(v):
    return "n/a" if v is None else repr(float(v))


def write_lp_csv(grid: SweepGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "gamma", "k", "mrr", "mr", "hits1", "hits3", "hits10", "mrr_r", "relation"])
        for c in grid.ordered():
            if c.complete:
                w.writerow(["test", _label(c.gamma), c.k] + [repr(float(getattr(c, n))) for n in
                           ("mrr", "mr", "hits1", "hits3", "hits10", "mrr_r")] + [c.target_relation])


def write_classifier_csv(grid: SweepGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "k", "target_relation", "n_classes", "val_acc", "test_acc", "epochs_run"])
        for c in grid.ordered():
            if c.complete:
                w.writerow([_label(c.gamma), c.k, c.target_relation, c.n_classes,
                            repr(float(c.cls_val_acc)), repr(float(c.cls_acc)), c.cls_epochs])


def summary_text(grid: SweepGrid, correlations) -> str:
    lines = [f"dataset: {grid.label}",
             f"margins: {', '.join(_label(g) for g in grid.margins)}",
             f"dims: {', '.join(str(k) for k in grid.dims)}"]
    done = [c for c in grid.ordered() if c.complete]
    expected = len(grid.margins) * len(grid.dims)
    lines.append(f"cells: {len(done)}/{expected} complete")
    missing = [(g, k) for (g, k), ok in grid.completeness().items() if not ok and grid.get(g, k) is None]
    for c in grid.failed():
        lines.append(f"  FAILED gamma={_label(c.gamma)} k={c.k}: {c.error}")
    for g, k in missing:
        lines.append(f"  MISSING gamma={_label(g)} k={k}")
    if done:
        lines.append(f"classifier target relation: {done[0].target_relation}")
        lines.append("best (gamma, k) per metric:")
        for metric in METRICS:
            vals = [(c.value(metric), c) for c in done if math.isfinite(c.value(metric))]
            if not vals:
                lines.append(f"  {metric}: n/a")
                continue
            pick = min if metric in LOWER_IS_BETTER else max
            v, c = pick(vals, key=lambda t: t[0])
            lines.append(f"  {metric}: {v:.4f} at gamma={_label(c.gamma)} k={c.k}")
    lines.append("")
    lines.append("correlation with classifier accuracy across margins:")
    for kind in ("pearson", "spearman"):
        lines.append(f"  {kind}:")
        for k in grid.dims:
            parts = []
            for metric in LP_METRICS:
                row = next((r for r in correlations if r.k == k and r.metric == metric), None)
                val = format_coefficient(getattr(row, kind) if row else None)
                note = f" ({row.reason})" if row is not None and getattr(row, kind) is None and row.reason else ""
                parts.append(f"{'MRR' if metric == 'mrr' else 'MRR_r'}={val}{note}")
            lines.append(f"    k={k}: " + "  ".join(parts))
    return "\n".join(lines) + "\n"


def emit_report(grid: SweepGrid, out_dir) -> dict[str, Path]:
    """Write every tabular output, the heatmaps, and ``summary.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    cells_path = out_dir / "cells.csv"
    write_cells_csv(grid.ordered(), cells_path)
    written["cells"] = cells_path
    rows = correlate_sweep(grid)
    written["correlations"] = out_dir / "correlations.csv"
    write_correlations_csv(rows, written["correlations"])
    written["lp"] = out_dir / "lp_report.csv"
    write_lp_csv(grid, written["lp"])
    written["classifier"] = out_dir / "classifier_report.csv"
    write_classifier_csv(grid, written["classifier"])
    if any(c.complete for c in grid.cells.values()):
        heat_dir = out_dir / "heatmaps"
        heat_dir.mkdir(exist_ok=True)
        for metric in METRICS:
            csv_path, svg_path = emit_heatmap(grid, metric, heat_dir / metric)
            written[f"heatmap_{metric}"] = csv_path
            written[f"heatmap_{metric}_svg"] = svg_path
    written["summary"] = out_dir / "summary.txt"
    written["summary"].write_text(summary_text(grid, rows), encoding="utf-8")
    return written

"""Pearson and Spearman correlation between LP metrics and classifier accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LP_METRICS = ("mrr", "mrr_r")
METRIC_LABELS = {"mrr": "MRR", "mrr_r": "MRR_r"}


class UndefinedCorrelation(ValueError):
    """Raised when either series is constant (or too short)."""


@dataclass
class MetricSeries:
    x: np.ndarray
    y: np.ndarray
    x_label: str = "x"
    y_label: str = "y"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("series must be 1-d and of equal length")
        if len(self.x) < 3:
            raise UndefinedCorrelation(f"need at least 3 paired observations, got {len(self.x)}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("series contain non-finite values")


def _as_series(x, y=None) -> MetricSeries:
    if isinstance(x, MetricSeries):
        return x
    return MetricSeries(x, y)


def pearson(x, y=None) -> float:
    """Product-moment correlation of a :class:`MetricSeries` or two sequences."""
    s = _as_series(x, y)
    dx = s.x - s.x.mean()
    dy = s.y - s.y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    sorted_v = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y=None) -> float:
    s = _as_series(x, y)
    return pearson(average_ranks(s.x), average_ranks(s.y))


@dataclass
class CorrelationRow:
    dataset: str
    k: int
    metric: str
    pearson: float | None
    spearman: float | None
    n: int
    reason: str = ""


def _coefficient(fn, x, y):
    try:
        return fn(x, y), ""
    except UndefinedCorrelation as exc:
        return None, str(exc)


def correlate_sweep(grid) -> list[CorrelationRow]:
    """Per k and LP metric, coefficients against classifier accuracy over the margin axis.

    Only completed cells with finite values take part; a k with fewer than
    three usable margins yields ``None`` coefficients with a reason.
    """
    rows = []
    for k in grid.dims:
        for metric in LP_METRICS:
            xs, ys = [], []
            for gamma in grid.margins:
                cell = grid.get(gamma, k)
                if cell is None or not cell.complete:
                    continue
                x, y = cell.value(metric), cell.value("cls_acc")
                if math.isfinite(x) and math.isfinite(y):
                    xs.append(x)
                    ys.append(y)
            if len(xs) < 3:
                rows.append(CorrelationRow(grid.label, k, metric, None, None, len(xs),
                                           f"only {len(xs)} completed margin(s)"))
                continue
            p, why_p = _coefficient(pearson, xs, ys)
            s, why_s = _coefficient(spearman, xs, ys)
            rows.append(CorrelationRow(grid.label, k, metric, p, s, len(xs), why_p or why_s))
    return rows


def format_coefficient(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def coefficient_table(rows: list[CorrelationRow]) -> str:
    """Text table: one block per coefficient kind, k blocks across, MRR / MRR_r per k."""
    dims = sorted({r.k for r in rows})
    lookup = {(r.k, r.metric): r for r in rows}
    label = rows[0].dataset if rows else ""
    header = f"{'':<14}" + "".join(f"{'k = ' + str(k):^18}" for k in dims)
    sub = f"{'':<14}" + "".join(f"{METRIC_LABELS[m]:>9}" for _ in dims for m in LP_METRICS)
    out = []
    for kind in ("pearson", "spearman"):
        out.append(f"({kind.capitalize()} correlation coefficients)")
        out.append(header)
        out.append(sub)
        cells = []
        for k in dims:
            for m in LP_METRICS:
                r = lookup.get((k, m))
                cells.append(format_coefficient(getattr(r, kind) if r else None))
        out.append(f"{label:<14}" + "".join(f"{c:>9}" for c in cells))
        out.append("")
    return "\n".join(out)

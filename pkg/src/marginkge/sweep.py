"""Margin x dimension grid: per-cell training, both evaluations, resumable cell files."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import lp
from .classifier import ClassifierConfig, build_task, select_target_relation, train_classifier
from .kg import DatasetSplits
from .model import save_checkpoint
from .trainer import TrainConfig, train_model, write_training_log

logger = logging.getLogger(__name__)

DEFAULT_MARGINS = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
DEFAULT_DIMS = (32, 64, 128)
CELL_DIR = "cells"


@dataclass
class SweepConfig:
    margins: tuple[float, ...] = DEFAULT_MARGINS
    dims: tuple[int, ...] = DEFAULT_DIMS
    manifest: Path | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    out_dir: Path = Path("sweep-out")
    parallel: int = 0  # 0 = available CPUs
    task_seed: int = 0

    def __post_init__(self):
        self.margins = tuple(float(m) for m in self.margins)
        self.dims = tuple(int(k) for k in self.dims)
        if not self.margins or not self.dims:
            raise ValueError("margins and dims must be non-empty")
        if any(m <= 0 for m in self.margins) or any(k < 1 for k in self.dims):
            raise ValueError("margins must be > 0 and dims >= 1")
        if any(b <= a for a, b in zip(self.margins, self.margins[1:])):
            raise ValueError("margins must be strictly increasing")
        self.out_dir = Path(self.out_dir)

    def workers(self, n_cells: int) -> int:
        n = self.parallel or os.cpu_count() or 1
        return max(1, min(n, n_cells))


@dataclass
class SweepCell:
    dataset: str
    gamma: float
    k: int
    status: str = "complete"
    error: str = ""
    mrr: float = math.nan
    mr: float = math.nan
    hits1: float = math.nan
    hits3: float = math.nan
    hits10: float = math.nan
    mrr_r: float = math.nan
    target_relation: str = ""
    n_classes: int = 0
    cls_val_acc: float = math.nan
    cls_acc: float = math.nan
    cls_epochs: int = 0
    replica: int = 0
    best_epoch: int = 0
    valid_mrr: float = math.nan
    seconds: float = 0.0

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def value(self, metric: str) -> float:
        if metric not in METRICS:
            raise KeyError(f"unknown metric {metric!r}; valid: {', '.join(METRICS)}")
        return getattr(self, metric)

    def content_key(self) -> tuple:
        """Everything except wall-clock time, for determinism comparisons."""
        return tuple(getattr(self, f.name) for f in fields(self) if f.name != "seconds")


METRICS = ("mrr", "mrr_r", "cls_acc", "mr", "hits1", "hits3", "hits10")
# mean rank is the only metric where lower is better
LOWER_IS_BETTER = {"mr"}
_CELL_FIELDS = [f.name for f in fields(SweepCell)]
_CELL_TYPES = {f.name: f.type for f in fields(SweepCell)}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    kind = _CELL_TYPES[name]
    if kind in ("float", float):
        return float(text)
    if kind in ("int", int):
        return int(text)
    return text


def cell_filename(gamma: float, k: int) -> str:
    return f"cell_g{gamma!r}_k{k}.csv"


def write_cells_csv(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CELL_FIELDS)
        for c in cells:
            w.writerow([_fmt(getattr(c, n)) for n in _CELL_FIELDS])


def read_cells_csv(path) -> list[SweepCell]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepCell(**{n: _parse(n, row[n]) for n in _CELL_FIELDS}) for row in rows]


@dataclass
class SweepGrid:
    label: str
    margins: tuple[float, ...]
    dims: tuple[int, ...]
    cells: dict[tuple[float, int], SweepCell] = field(default_factory=dict)

    def get(self, gamma: float, k: int) -> SweepCell | None:
        return self.cells.get((float(gamma), int(k)))

    def add(self, cell: SweepCell) -> None:
        self.cells[(cell.gamma, cell.k)] = cell

    def ordered(self) -> list[SweepCell]:
        return [c for g in self.margins for k in self.dims if (c := self.get(g, k)) is not None]

    def completeness(self) -> dict[tuple[float, int], bool]:
        return {(g, k): bool((c := self.get(g, k)) and c.complete) for g in self.margins for k in self.dims}

    def failed(self) -> list[SweepCell]:
        return [c for c in self.ordered() if not c.complete]

    @classmethod
    def from_cells(cls, cells: list[SweepCell], label: str | None = None) -> "SweepGrid":
        margins = tuple(sorted({c.gamma for c in cells}))
        dims = tuple(sorted({c.k for c in cells}))
        grid = cls(label or (cells[0].dataset if cells else "dataset"), margins, dims)
        for c in cells:
            grid.add(c)
        return grid


def run_cell(
    ds: DatasetSplits,
    gamma: float,
    k: int,
    train_cfg: TrainConfig,
    cls_cfg: ClassifierConfig,
    target: int,
    task_seed: int = 0,
    log_path: Path | None = None,
    checkpoint_path: Path | None = None,
) -> SweepCell:
    """Train, evaluate on test, and run the classifier for one (gamma, k)."""
    start = time.perf_counter()
    log_rows: list = []
    winner, _ = train_model(ds, k, gamma, train_cfg, log_rows=log_rows)
    if log_path is not None:
        write_training_log(log_rows, log_path)
    if checkpoint_path is not None:
        save_checkpoint(winner.params, checkpoint_path)
    report = lp.evaluate(winner.params, ds.signatures, ds.test)
    mrr_r = report.per_relation_mrr.get(target, math.nan)
    task = build_task(ds, target, task_seed)
    cls = train_classifier(task, winner.params, cls_cfg)
    return SweepCell(
        dataset=ds.label,
        gamma=float(gamma),
        k=int(k),
        mrr=report.mrr,
        mr=report.mean_rank,
        hits1=report.hits1,
        hits3=report.hits3,
        hits10=report.hits10,
        mrr_r=mrr_r,
        target_relation=ds.vocab.relations.name(target),
        n_classes=task.n_classes,
        cls_val_acc=cls.valid_accuracy,
        cls_acc=cls.test_accuracy,
        cls_epochs=cls.epochs_run,
        replica=winner.replica,
        best_epoch=winner.best_epoch,
        valid_mrr=winner.best_valid_mrr,
        seconds=time.perf_counter() - start,
    )


def _cell_job(args) -> SweepCell:
    ds, gamma, k, train_cfg, cls_cfg, target, task_seed, cell_dir = args
    path = Path(cell_dir) / cell_filename(gamma, k)
    log_path = Path(cell_dir) / f"trainlog_g{gamma!r}_k{k}.csv"
    try:
        cell = run_cell(ds, gamma, k, train_cfg, cls_cfg, target, task_seed, log_path)
    except Exception as exc:  # a failed cell must not sink the sweep
        logger.exception("cell gamma=%r k=%d failed", gamma, k)
        cell = SweepCell(ds.label, float(gamma), int(k), status="failed", error=f"{type(exc).__name__}: {exc}")
    write_cells_csv([cell], path)
    return cell


def load_cells(cell_dir) -> list[SweepCell]:
    cell_dir = Path(cell_dir)
    cells = []
    for path in sorted(cell_dir.glob("cell_g*_k*.csv")):
        try:
            cells.extend(read_cells_csv(path))
        except (KeyError, ValueError) as exc:
            logger.warning("ignoring unreadable cell file %s: %s", path, exc)
    return cells


def run_sweep(ds: DatasetSplits, config: SweepConfig) -> SweepGrid:
    """Run every missing or failed cell; completed cell files are reused as-is."""
    cell_dir = config.out_dir / CELL_DIR
    cell_dir.mkdir(parents=True, exist_ok=True)
    grid = SweepGrid(ds.label, config.margins, config.dims)
    wanted = {(g, k) for g in config.margins for k in config.dims}
    for cell in load_cells(cell_dir):
        if (cell.gamma, cell.k) in wanted and cell.complete and cell.dataset == ds.label:
            grid.add(cell)

    target = select_target_relation(ds)
    todo = [(g, k) for g in config.margins for k in config.dims if grid.get(g, k) is None]
    logger.info("%s: %d cell(s) to run, %d reused", ds.label, len(todo), len(wanted) - len(todo))
    jobs = [(ds, g, k, config.train, config.classifier, target, config.task_seed, str(cell_dir)) for g, k in todo]
    workers = config.workers(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell_job, j) for j in jobs]
            for fut in as_completed(futures):
                grid.add(fut.result())
    else:
        for j in jobs:
            grid.add(_cell_job(j))
    return grid

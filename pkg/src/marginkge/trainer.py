"""Epoch loop, early stopping on validation MRR, replicas and tuning-set selection."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import lp
from .kg import DatasetSplits
from .model import ModelParams, fast_step, init_params
from .sampler import NegativeSampler, UnsampleableTriple

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.01
    max_epochs: int = 1000
    eval_every: int = 10
    patience: int = 10
    replicas: int = 10
    seed: int = 0
    norm: str = "L2"
    side_mode: str = "uniform"
    filter_negatives: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.eval_every < 1 or self.patience < 1 or self.replicas < 1:
            raise ValueError("eval_every, patience and replicas must be >= 1")


@dataclass
class EpochSummary:
    mean_loss: float
    active_fraction: float
    hinges: int
    skipped: int


@dataclass
class ReplicaResult:
    replica: int
    best_epoch: int
    best_valid_mrr: float
    params: ModelParams = field(repr=False)
    curve: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, mean_loss, mrr)
    tune_mrr: float | None = None


def train_epoch(
    params: ModelParams, learn: np.ndarray, sampler: NegativeSampler, lr: float
) -> EpochSummary:
    """One pass over ``learn`` in a freshly shuffled order, one negative per triple."""
    if len(learn) == 0:
        raise ValueError("learn split is empty")
    order = list(range(len(learn)))
    sampler.rng.shuffle(order)
    rows = learn.tolist()
    sigs = sampler.signatures
    total, active, skipped = 0.0, 0, 0
    for i in order:
        h, r, t = rows[i]
        try:
            h2, t2 = sampler.corrupt_ids(h, r, t)
        except UnsampleableTriple as exc:
            skipped += 1
            logger.debug("skipping triple %d: %s", i, exc)
            continue
        sig = sigs[r]
        loss = fast_step(params, sig.domain, h, r, sig.range, t, h2, t2, lr)
        total += loss
        active += loss > 0.0
    if skipped:
        logger.warning("%d unsampleable triple(s) skipped this epoch", skipped)
    n = len(learn) - skipped
    return EpochSummary(total / n if n else 0.0, active / n if n else 0.0, n, skipped)


def validation_mrr(params: ModelParams, ds: DatasetSplits, split: str = "valid") -> float:
    return lp.evaluate(params, ds.signatures, ds.split(split)).mrr


def train_replica(
    ds: DatasetSplits,
    dim: int,
    margin: float,
    config: TrainConfig,
    replica: int = 0,
    log_rows: list | None = None,
) -> ReplicaResult:
    """Train one replica with early stopping; returns the best snapshot, not the last.

    Validation MRR is measured every ``eval_every`` epochs and after the
    final epoch; ``max_epochs == 0`` measures the initial model.
    """
    if ds.valid is None or len(ds.valid) == 0:
        raise ValueError("validation split is empty")
    seed = config.seed + replica
    params = init_params(dim, margin, ds.vocab, seed, config.norm)
    sampler = NegativeSampler.for_dataset(ds, seed, config.side_mode, config.filter_negatives)

    if config.max_epochs == 0:
        mrr = validation_mrr(params, ds)
        if log_rows is not None:
            log_rows.append((replica, 0, float("nan"), mrr))
        return ReplicaResult(replica, 0, mrr, params, [(0, float("nan"), mrr)])

    best_mrr, best_epoch, best = -np.inf, 0, None
    curve = []
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        summary = train_epoch(params, ds.learn, sampler, config.lr)
        if epoch % config.eval_every and epoch != config.max_epochs:
            continue
        mrr = validation_mrr(params, ds)
        curve.append((epoch, summary.mean_loss, mrr))
        if log_rows is not None:
            log_rows.append((replica, epoch, summary.mean_loss, mrr))
        logger.debug("replica %d epoch %d loss %.5f valid mrr %.5f", replica, epoch, summary.mean_loss, mrr)
        if mrr > best_mrr:
            best_mrr, best_epoch, best = mrr, epoch, params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return ReplicaResult(replica, best_epoch, float(best_mrr), best, curve)


def _replica_job(args):
    ds, dim, margin, config, replica = args
    rows: list = []
    res = train_replica(ds, dim, margin, config, replica, rows)
    return res, rows


def train_model(
    ds: DatasetSplits,
    dim: int,
    margin: float,
    config: TrainConfig,
    workers: int = 1,
    log_rows: list | None = None,
) -> tuple[ReplicaResult, list[ReplicaResult]]:
    """Train replicas and pick the one with the best tuning MRR (lowest index on ties).

    Without a tuning split exactly one replica is trained.
    """
    n = config.replicas if ds.has_tuning else 1
    jobs = [(ds, dim, margin, config, i) for i in range(n)]
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            outputs = list(pool.map(_replica_job, jobs))
    else:
        outputs = [_replica_job(j) for j in jobs]
    results = []
    for res, rows in outputs:
        results.append(res)
        if log_rows is not None:
            log_rows.extend(rows)
    if n == 1:
        return results[0], results
    for res in results:
        res.tune_mrr = validation_mrr(res.params, ds, "tune")
    winner = results[0]
    for res in results[1:]:
        if res.tune_mrr > winner.tune_mrr:
            winner = res
    return winner, results


CONFIG_KEYS = {
    "dim": int,
    "margin": float,
    "lr": float,
    "max_epochs": int,
    "eval_every": int,
    "patience": int,
    "replicas": int,
    "seed": int,
    "norm": str,
}


def read_run_config(path) -> dict[str, object]:
    """Parse a flat ``key=value`` run configuration; unknown keys are kept as strings."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        conv = CONFIG_KEYS.get(key, str)
        try:
            out[key] = conv(value)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    if "norm" in out and out["norm"] not in ("L1", "L2"):
        raise ValueError(f"{path}: norm must be L1 or L2")
    return out


def train_config_from(values: dict[str, object], base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    kwargs = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    kwargs.update({k: v for k, v in values.items() if k in kwargs})
    return TrainConfig(**kwargs)


def write_training_log(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("replica,epoch,mean_loss,valid_mrr\n")
        for replica, epoch, loss, mrr in rows:
            fh.write(f"{replica},{epoch},{loss!r},{mrr!r}\n")

"""Downstream check on frozen embeddings: predict a target relation's tail class.

The net is k -> 2k -> C with logistic units everywhere, trained by
per-example SGD on the summed binary cross-entropy against one-hot targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kg import DatasetSplits, EntityRef
from .model import ModelParams


class TaskError(ValueError):
    pass


@dataclass
class ClassifierTask:
    relation: int
    classes: list[int]
    heads: list[EntityRef]
    labels: np.ndarray
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass
class MLPParams:
    w1: np.ndarray  # (k, 2k)
    b1: np.ndarray
    w2: np.ndarray  # (2k, C)
    b2: np.ndarray

    def copy(self) -> "MLPParams":
        return MLPParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])


@dataclass
class ClassifierConfig:
    lr: float = 0.01
    max_epochs: int = 1000
    eval_every: int = 5
    patience: int = 20
    seed: int = 0


@dataclass
class ClassifierResult:
    params: MLPParams = field(repr=False)
    valid_accuracy: float
    test_accuracy: float
    best_epoch: int
    epochs_run: int
    curve: list[tuple[int, float]] = field(default_factory=list)


def head_coverage(ds: DatasetSplits) -> dict[int, int]:
    """Distinct heads per relation over all splits."""
    all_t = ds.all_triples()
    return {rid: len(np.unique(all_t[all_t[:, 1] == rid, 0])) for rid in sorted(ds.signatures)}


def select_target_relation(ds: DatasetSplits) -> int:
    """Relation covering the most distinct heads of its domain.

    Ties go to the lexicographically smallest name, so the choice does not depend on file order.
    """
    coverage = head_coverage(ds)
    if not coverage:
        raise TaskError("dataset has no relations")
    name = ds.vocab.relations.name
    return min(coverage, key=lambda rid: (-coverage[rid], name(rid)))


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train = math.floor(0.8 * n)
    n_valid = math.floor(0.1 * n)
    return n_train, n_valid, n - n_train - n_valid


def build_task(ds: DatasetSplits, relation: int, seed: int) -> ClassifierTask:
    sig = ds.signatures[relation]
    all_t = ds.all_triples()
    rows = all_t[all_t[:, 1] == relation]
    # duplicates across splits collapse to one instance
    _, first = np.unique(rows[:, [0, 2]], axis=0, return_index=True)
    pairs = rows[np.sort(first)][:, [0, 2]]
    if len(pairs) < 10:
        raise TaskError(f"relation {relation} has {len(pairs)} instances, need >= 10")
    classes = sorted(set(pairs[:, 1].tolist()))
    if len(classes) < 2:
        raise TaskError(f"relation {relation} has fewer than 2 tail classes")
    index = {c: i for i, c in enumerate(classes)}
    labels = np.array([index[t] for t in pairs[:, 1].tolist()], dtype=np.int64)
    heads = [EntityRef(sig.domain, int(h)) for h in pairs[:, 0]]
    perm = np.random.default_rng(seed).permutation(len(pairs))
    n_train, n_valid, _ = split_sizes(len(pairs))
    return ClassifierTask(
        relation,
        classes,
        heads,
        labels,
        perm[:n_train],
        perm[n_train:n_train + n_valid],
        perm[n_train + n_valid:],
    )


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_mlp(k: int, n_classes: int, seed: int) -> MLPParams:
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return MLPParams(glorot(k, 2 * k), np.zeros(2 * k), glorot(2 * k, n_classes), np.zeros(n_classes))


def forward(net: MLPParams, x: np.ndarray) -> np.ndarray:
    """Class scores in (0, 1); works on one vector or a batch of rows."""
    hidden = sigmoid(x @ net.w1 + net.b1)
    return sigmoid(hidden @ net.w2 + net.b2)


def predict(net: MLPParams, x: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(forward(net, x), axis=-1)


def loss(net: MLPParams, x: np.ndarray, label: int) -> float:
    y = forward(net, x)
    target = np.zeros_like(y)
    target[label] = 1.0
    y = np.clip(y, 1e-300, 1.0)
    one_minus = np.clip(1.0 - y, 1e-300, 1.0)
    return float(-(target * np.log(y) + (1 - target) * np.log(one_minus)).sum())


def gradients(net: MLPParams, x: np.ndarray, label: int) -> MLPParams:
    """Backprop of :func:`loss` for one example, returned in the parameter layout."""
    hidden = sigmoid(x @ net.w1 + net.b1)
    y = sigmoid(hidden @ net.w2 + net.b2)
    delta_out = y.copy()
    delta_out[label] -= 1.0
    delta_hidden = (net.w2 @ delta_out) * hidden * (1.0 - hidden)
    return MLPParams(np.outer(x, delta_hidden), delta_hidden, np.outer(hidden, delta_out), delta_out)


def _sgd_update(net: MLPParams, x: np.ndarray, label: int, lr: float) -> None:
    hidden = sigmoid(x @ net.w1 + net.b1)
    y = sigmoid(hidden @ net.w2 + net.b2)
    y[label] -= 1.0
    delta_hidden = (net.w2 @ y) * hidden * (1.0 - hidden)
    net.w2 -= lr * np.outer(hidden, y)
    net.b2 -= lr * y
    net.w1 -= lr * np.outer(x, delta_hidden)
    net.b1 -= lr * delta_hidden


def accuracy(net: MLPParams, x: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return float("nan")
    return float((predict(net, x) == labels).mean())


def task_inputs(task: ClassifierTask, params: ModelParams) -> np.ndarray:
    # fancy indexing copies, so training never touches the embedding tables
    types = {ref.type for ref in task.heads}
    (t,) = types
    return params.entities[t][[ref.entity for ref in task.heads]]


def train_classifier(
    task: ClassifierTask,
    params: ModelParams,
    config: ClassifierConfig | None = None,
) -> ClassifierResult:
    """Early-stopped on validation accuracy; test accuracy is taken from the best snapshot."""
    config = config or ClassifierConfig()
    x_all = task_inputs(task, params)
    y_all = task.labels
    net = init_mlp(params.dim, task.n_classes, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    x_val, y_val = x_all[task.valid], y_all[task.valid]

    best_acc, best_epoch, best = -1.0, 0, net.copy()
    curve = []
    if config.max_epochs == 0 or len(task.train) == 0:
        acc = accuracy(net, x_val, y_val)
        return ClassifierResult(net, acc, accuracy(net, x_all[task.test], y_all[task.test]), 0, 0, [(0, acc)])

    stale, epoch = 0, 0
    train_idx = task.train.copy()
    for epoch in range(1, config.max_epochs + 1):
        rng.shuffle(train_idx)
        for i in train_idx:
            _sgd_update(net, x_all[i], int(y_all[i]), config.lr)
        if epoch % config.eval_every and epoch != config.max_epochs:
            continue
        acc = accuracy(net, x_val, y_val)
        curve.append((epoch, acc))
        if acc > best_acc:
            best_acc, best_epoch, best = acc, epoch, net.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    test_acc = accuracy(best, x_all[task.test], y_all[task.test])
    return ClassifierResult(best, best_acc, test_acc, best_epoch, epoch, curve)

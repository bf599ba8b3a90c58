"""Typed translational embeddings: score, margin hinge, SGD update, checkpoints.

Each entity type has its own ``(count, k)`` table; relations share one
``(n_relations, k)`` table. The score of ``(c_h:h, r, c_t:t)`` is the
distance ``||h + r - t||`` (L2 by default, L1 optional) and lower means
more plausible. Training minimises ``[margin + d(pos) - d(neg)]_+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import EntityRef, TypedTriple, Vocabulary

CHECKPOINT_MAGIC = "marginkge-checkpoint"
CHECKPOINT_VERSION = 1
NORMS = ("L1", "L2")
_EPS = 1e-12


class CheckpointError(Exception):
    pass


@dataclass
class ModelParams:
    dim: int
    margin: float
    entities: list[np.ndarray]
    relations: np.ndarray
    norm: str = "L2"

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dim, self.margin, [e.copy() for e in self.entities], self.relations.copy(), self.norm
        )

    def entity(self, ref: EntityRef) -> np.ndarray:
        return self.entities[ref.type][ref.entity]

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of all parameters and hyperparameters."""
        return (
            self.dim == other.dim
            and self.margin == other.margin
            and self.norm == other.norm
            and len(self.entities) == len(other.entities)
            and all(np.array_equal(a, b) for a, b in zip(self.entities, other.entities))
            and np.array_equal(self.relations, other.relations)
        )


@dataclass(frozen=True)
class HingeTerm:
    positive_score: float
    negative_score: float
    loss: float
    active: bool


def _normalize_rows(m: np.ndarray) -> None:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    np.divide(m, norms, out=m, where=norms > _EPS)


def init_params(
    dim: int,
    margin: float,
    vocab: Vocabulary,
    seed: int,
    norm: str = "L2",
    *,
    return_raw: bool = False,
):
    """Uniform(-6/sqrt(k), 6/sqrt(k)) draws, entity rows projected to the unit sphere.

    With ``return_raw`` the pre-normalisation entity draws are returned too.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not margin > 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(dim)
    raw = [rng.uniform(-bound, bound, size=(len(t), dim)) for t in vocab.entities]
    relations = rng.uniform(-bound, bound, size=(vocab.n_relations, dim))
    entities = [r.copy() for r in raw]
    for e in entities:
        _normalize_rows(e)
    params = ModelParams(dim, float(margin), entities, relations, norm)
    if return_raw:
        return params, raw
    return params


def _check_ref(params: ModelParams, ref: EntityRef) -> None:
    if not 0 <= ref.type < len(params.entities):
        raise IndexError(f"type id {ref.type} out of range")
    if not 0 <= ref.entity < len(params.entities[ref.type]):
        raise IndexError(f"entity id {ref.entity} out of range for type {ref.type}")


def _check_triple(params: ModelParams, triple: TypedTriple) -> None:
    _check_ref(params, triple.head)
    _check_ref(params, triple.tail)
    if not 0 <= triple.relation < len(params.relations):
        raise IndexError(f"relation id {triple.relation} out of range")


def _distance(v: np.ndarray, norm: str) -> float:
    if norm == "L2":
        return math.sqrt(float(v @ v))
    return float(np.abs(v).sum())


def _distance_grad(v: np.ndarray, d: float, norm: str) -> np.ndarray:
    # d||v||/dv; zero at the singular point
    if norm == "L2":
        if d < _EPS:
            return np.zeros_like(v)
        return v / d
    return np.sign(v)


def score(params: ModelParams, triple: TypedTriple) -> float:
    _check_triple(params, triple)
    v = params.entity(triple.head) + params.relations[triple.relation] - params.entity(triple.tail)
    return _distance(v, params.norm)


def _hinge_from_scores(margin: float, pos: float, neg: float) -> HingeTerm:
    loss = max(0.0, margin + pos - neg)
    return HingeTerm(pos, neg, loss, loss > 0.0)


def hinge(params: ModelParams, positive: TypedTriple, negative: TypedTriple) -> HingeTerm:
    if positive.relation != negative.relation:
        raise ValueError(
            f"relation mismatch: positive {positive.relation} vs negative {negative.relation}"
        )
    return _hinge_from_scores(params.margin, score(params, positive), score(params, negative))


def hinge_gradients(
    params: ModelParams, positive: TypedTriple, negative: TypedTriple
) -> tuple[HingeTerm, dict[EntityRef, np.ndarray], np.ndarray]:
    """Gradient of ``margin + d(pos) - d(neg)`` w.r.t. every involved row.

    Returns the hinge, a map entity -> gradient (contributions of shared
    entities summed), and the gradient for the relation row. Gradients are
    returned even when the hinge is inactive.
    """
    if positive.relation != negative.relation:
        raise ValueError("relation mismatch between positive and negative")
    _check_triple(params, positive)
    _check_triple(params, negative)
    r = params.relations[positive.relation]
    u_pos = params.entity(positive.head) + r - params.entity(positive.tail)
    u_neg = params.entity(negative.head) + r - params.entity(negative.tail)
    d_pos = _distance(u_pos, params.norm)
    d_neg = _distance(u_neg, params.norm)
    g_pos = _distance_grad(u_pos, d_pos, params.norm)
    g_neg = _distance_grad(u_neg, d_neg, params.norm)

    grads: dict[EntityRef, np.ndarray] = {}

    def add(ref, g):
        if ref in grads:
            grads[ref] = grads[ref] + g
        else:
            grads[ref] = g

    add(positive.head, g_pos)
    add(positive.tail, -g_pos)
    add(negative.head, -g_neg)
    add(negative.tail, g_neg)
    return _hinge_from_scores(params.margin, d_pos, d_neg), grads, g_pos - g_neg


def sgd_step(
    params: ModelParams, positive: TypedTriple, negative: TypedTriple, learning_rate: float
) -> HingeTerm:
    """One in-place SGD update on the hinge; touched entity rows renormalised to norm 1.

    An inactive hinge leaves the parameters untouched.
    """
    if not learning_rate > 0:
        raise ValueError(f"learning rate must be > 0, got {learning_rate}")
    term, grads, g_rel = hinge_gradients(params, positive, negative)
    if not term.active:
        return term
    params.relations[positive.relation] -= learning_rate * g_rel
    for ref, g in grads.items():
        row = params.entities[ref.type][ref.entity]
        row -= learning_rate * g
        n = math.sqrt(float(row @ row))
        if n > _EPS:
            row /= n
    return term


def fast_step(
    params: ModelParams,
    h_type: int,
    h: int,
    r: int,
    t_type: int,
    t: int,
    h2: int,
    t2: int,
    lr: float,
) -> float:
    """Hot-loop variant of :func:`sgd_step` on raw ids; returns the hinge loss.

    The negative is ``(h2, r, t2)`` with the same types. ``lr == 0`` only
    evaluates the loss.
    """
    H, T = params.entities[h_type], params.entities[t_type]
    rel = params.relations[r]
    hv, tv = H[h], T[t]
    u_pos = hv + rel - tv
    u_neg = H[h2] + rel - T[t2]
    l2 = params.norm == "L2"
    if l2:
        d_pos = math.sqrt(u_pos @ u_pos)
        d_neg = math.sqrt(u_neg @ u_neg)
    else:
        d_pos = float(np.abs(u_pos).sum())
        d_neg = float(np.abs(u_neg).sum())
    loss = params.margin + d_pos - d_neg
    if loss <= 0.0:
        return 0.0
    if lr == 0.0:
        return loss
    if l2:
        g_pos = u_pos / d_pos if d_pos >= _EPS else np.zeros_like(u_pos)
        g_neg = u_neg / d_neg if d_neg >= _EPS else np.zeros_like(u_neg)
    else:
        g_pos = np.sign(u_pos)
        g_neg = np.sign(u_neg)
    rel -= lr * (g_pos - g_neg)
    if h == h2:
        # tail corrupted: shared head gets g_pos - g_neg
        hv -= lr * (g_pos - g_neg)
        tv += lr * g_pos
        tn = T[t2]
        tn -= lr * g_neg
        rows = (hv, tv, tn)
    else:
        tv += lr * (g_pos - g_neg)
        hv -= lr * g_pos
        hn = H[h2]
        hn += lr * g_neg
        rows = (hv, tv, hn)
    for row in rows:
        n = math.sqrt(row @ row)
        if n > _EPS:
            row /= n
    return loss


def save_checkpoint(params: ModelParams, path) -> None:
    path = Path(path)
    header = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"k={params.dim}",
        f"margin={params.margin!r}",
        f"norm={params.norm}",
        "entity_counts=" + ",".join(str(len(e)) for e in params.entities),
        f"relations={len(params.relations)}",
        "---",
    ]
    lines = header[:]
    for table in (*params.entities, params.relations):
        for row in table:
            lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("--- end")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def load_checkpoint(path, expected_dim: int | None = None) -> ModelParams:
    """Load a checkpoint; raises :class:`CheckpointError` on any inconsistency."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines or lines[0] != f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}":
        raise CheckpointError(f"{path}: unsupported checkpoint header {lines[0][:60]!r}")
    try:
        sep = lines.index("---")
    except ValueError:
        raise CheckpointError(f"{path}: header terminator missing") from None
    meta = {}
    for line in lines[1:sep]:
        key, _, value = line.partition("=")
        meta[key] = value
    try:
        dim = int(meta["k"])
        margin = float(meta["margin"])
        norm = meta["norm"]
        counts = [int(c) for c in meta["entity_counts"].split(",") if c]
        n_rel = int(meta["relations"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None
    if norm not in NORMS:
        raise CheckpointError(f"{path}: unknown norm {norm!r}")
    if expected_dim is not None and dim != expected_dim:
        raise CheckpointError(f"{path}: dimension {dim} does not match expected {expected_dim}")
    body = lines[sep + 1:]
    if "--- end" not in body:
        raise CheckpointError(f"{path}: truncated (end marker missing)")
    body = body[: body.index("--- end")]
    expected_rows = sum(counts) + n_rel
    if len(body) != expected_rows:
        raise CheckpointError(f"{path}: expected {expected_rows} rows, found {len(body)}")
    try:
        values = np.array([[float(x) for x in row.split()] for row in body], dtype=np.float64)
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad value ({exc})") from None
    if expected_rows and values.shape != (expected_rows, dim):
        raise CheckpointError(f"{path}: row width does not match k={dim}")
    values = values.reshape(expected_rows, dim)
    if not np.all(np.isfinite(values)):
        raise CheckpointError(f"{path}: non-finite values")
    entities, start = [], 0
    for c in counts:
        entities.append(values[start:start + c].copy())
        start += c
    return ModelParams(dim, margin, entities, values[start:].copy(), norm)

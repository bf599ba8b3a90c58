"""Type-restricted link prediction: ranks, MRR, MR and Hits@{1,3,10}.

Every test triple yields a head-missing and a tail-missing query. The
candidate pool is the full entity table of the missing slot's type. Ranking
is raw by default: other true triples stay in the pool. Ties take the mean
rank of the tied block, so a true entity tied with ``m - 1`` others among
``m`` candidates gets ``(m + 1) / 2``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .kg import RelationSignature, TypedTriple
from .model import ModelParams
from .sampler import CorruptionSide

HITS_AT = (1, 3, 10)
# upper bound on floats materialised per distance block
_BLOCK_FLOATS = 4_000_000


class LPQuery(NamedTuple):
    triple: TypedTriple
    missing: CorruptionSide


@dataclass
class LPReport:
    mrr: float
    mean_rank: float
    hits1: float
    hits3: float
    hits10: float
    per_relation_mrr: dict[int, float]
    query_count: int
    per_relation_count: dict[int, int] = field(default_factory=dict)
    ranks: np.ndarray | None = field(default=None, repr=False)

    def metric(self, name: str) -> float:
        return {
            "mrr": self.mrr,
            "mr": self.mean_rank,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
        }[name]


def _distances(
    anchor: np.ndarray, candidates: np.ndarray, norm: str, side: CorruptionSide = CorruptionSide.TAIL
) -> np.ndarray:
    """(q, m) distances; evaluated as (h + r) - t for both sides.

    Tail side: ``anchor`` is h + r. Head side: ``anchor`` is the pair
    (r, t) stacked as (q, 2, k).
    """
    if side is CorruptionSide.TAIL:
        diff = anchor[:, None, :] - candidates[None, :, :]
    else:
        rel, tails = anchor[:, 0, :], anchor[:, 1, :]
        diff = (candidates[None, :, :] + rel[:, None, :]) - tails[:, None, :]
    if norm == "L2":
        return np.sqrt(np.einsum("qmk,qmk->qm", diff, diff))
    return np.abs(diff).sum(axis=2)


def _ranks_from_distances(dist: np.ndarray, truth: np.ndarray, exclude=None) -> np.ndarray:
    true_d = dist[np.arange(len(truth)), truth][:, None]
    if exclude is not None:
        dist = np.where(exclude, np.inf, dist)
    less = (dist < true_d).sum(axis=1)
    ties = (dist == true_d).sum(axis=1)
    return less + (ties + 1) / 2.0


def rank_of_truth(params: ModelParams, query: LPQuery) -> float:
    """Rank of the true entity for one query (1 = best)."""
    t = query.triple
    rel = params.relations[t.relation]
    if query.missing is CorruptionSide.TAIL:
        anchor = (params.entity(t.head) + rel)[None, :]
        pool, truth = params.entities[t.tail.type], t.tail.entity
    else:
        anchor = np.stack([rel, params.entity(t.tail)])[None, :, :]
        pool, truth = params.entities[t.head.type], t.head.entity
    d = _distances(anchor, pool, params.norm, query.missing)
    return float(_ranks_from_distances(d, np.array([truth]))[0])


def query_ranks(
    params: ModelParams,
    signatures: dict[int, RelationSignature],
    triples: np.ndarray,
    side: CorruptionSide,
    known: dict | None = None,
) -> np.ndarray:
    """Ranks for one side of every triple, in input order.

    ``known`` maps ``(side, anchor_entity, relation)`` to the set of true
    candidate ids; when given, those (other than the truth) are filtered.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ranks = np.empty(len(triples), dtype=np.float64)
    for rid in np.unique(triples[:, 1]):
        idx = np.nonzero(triples[:, 1] == rid)[0]
        sig = signatures[int(rid)]
        rel = params.relations[rid]
        if side is CorruptionSide.TAIL:
            anchors = params.entities[sig.domain][triples[idx, 0]] + rel
            pool = params.entities[sig.range]
            truth, anchor_ids = triples[idx, 2], triples[idx, 0]
        else:
            tails = params.entities[sig.range][triples[idx, 2]]
            anchors = np.stack([np.broadcast_to(rel, tails.shape), tails], axis=1)
            pool = params.entities[sig.domain]
            truth, anchor_ids = triples[idx, 0], triples[idx, 2]
        block = max(1, _BLOCK_FLOATS // max(1, pool.size))
        for start in range(0, len(idx), block):
            sl = slice(start, start + block)
            dist = _distances(anchors[sl], pool, params.norm, side)
            exclude = None
            if known is not None:
                exclude = np.zeros(dist.shape, dtype=bool)
                for row, (a, tr) in enumerate(zip(anchor_ids[sl], truth[sl])):
                    others = known.get((side, int(a), int(rid)), ())
                    for c in others:
                        if c != tr:
                            exclude[row, c] = True
            ranks[idx[sl]] = _ranks_from_distances(dist, truth[sl], exclude)
    return ranks


def known_answers(triples: np.ndarray) -> dict:
    """Index true triples for filtered ranking."""
    out: dict = defaultdict(set)
    for h, r, t in np.asarray(triples).tolist():
        out[(CorruptionSide.TAIL, h, r)].add(t)
        out[(CorruptionSide.HEAD, t, r)].add(h)
    return dict(out)


def report_from_ranks(ranks: np.ndarray, relations: np.ndarray) -> LPReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise ValueError("no queries to aggregate")
    rr = 1.0 / ranks
    per_rel, per_count = {}, {}
    for rid in np.unique(relations):
        mask = relations == rid
        per_rel[int(rid)] = float(rr[mask].mean())
        per_count[int(rid)] = int(mask.sum())
    return LPReport(
        mrr=float(rr.mean()),
        mean_rank=float(ranks.mean()),
        hits1=float((ranks <= 1).mean()),
        hits3=float((ranks <= 3).mean()),
        hits10=float((ranks <= 10).mean()),
        per_relation_mrr=per_rel,
        query_count=len(ranks),
        per_relation_count=per_count,
        ranks=ranks,
    )


def evaluate(
    params: ModelParams,
    signatures: dict[int, RelationSignature],
    triples: np.ndarray,
    sides: Sequence[CorruptionSide] = (CorruptionSide.HEAD, CorruptionSide.TAIL),
    known: dict | None = None,
) -> LPReport:
    """Aggregate link-prediction metrics over ``triples``.

    ``report.ranks`` holds the per-query ranks ordered triple by triple, with
    the sides of one triple adjacent in the order given by ``sides``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty triple list")
    per_side = [query_ranks(params, signatures, triples, s, known) for s in sides]
    ranks = np.stack(per_side, axis=1).reshape(-1)
    relations = np.repeat(triples[:, 1], len(sides))
    return report_from_ranks(ranks, relations)


def mrr_for_relation(report: LPReport, relation: int) -> float:
    try:
        return report.per_relation_mrr[relation]
    except KeyError:
        raise KeyError(f"relation {relation} has no queries in this report") from None

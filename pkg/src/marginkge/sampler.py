"""Type-respecting triple corruption driven by a portable xorshift64* generator."""

from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from .kg import DatasetSplits, EntityRef, RelationSignature, TypedTriple, Vocabulary

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
MAX_RESAMPLE = 100


class UnsampleableTriple(Exception):
    """Neither side of the triple has an alternative entity of the right type."""


class CorruptionSide(str, Enum):
    HEAD = "head"
    TAIL = "tail"


class XorShift64Star:
    """xorshift64* (Vigna 2014): shifts 12, 25, 27; multiplier 0x2545F4914F6CDD1D.

    The 64-bit state is seeded through one SplitMix64 round so that small
    consecutive seeds give unrelated streams. Output is identical on any
    platform with exact 64-bit integer arithmetic.
    """

    MULTIPLIER = 0x2545F4914F6CDD1D

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * self.MULTIPLIER) & _MASK64

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift on the 64-bit output."""
        return (self.next_u64() * n) >> 64

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


class NegativeSampler:
    """Per-worker corruption state.

    ``side_mode="bernoulli"`` switches the side choice to the
    tails-per-head / heads-per-tail rule; the default is a fair coin.
    ``known`` optionally rejects corruptions that are known true triples
    (rows ``(h, r, t)``); rejections count toward the resample cap.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        signatures: dict[int, RelationSignature],
        seed: int,
        side_mode: str = "uniform",
        known=None,
        head_prob: dict[int, float] | None = None,
    ):
        if side_mode not in ("uniform", "bernoulli"):
            raise ValueError(f"unknown side_mode {side_mode!r}")
        if side_mode == "bernoulli" and head_prob is None:
            raise ValueError("bernoulli side choice needs head_prob per relation")
        self.rng = XorShift64Star(seed)
        self.signatures = signatures
        self.pool_sizes = [len(t) for t in vocab.entities]
        self.side_mode = side_mode
        self.head_prob = head_prob or {}
        self.known = known

    @classmethod
    def for_dataset(cls, ds: DatasetSplits, seed: int, side_mode: str = "uniform", filter_known=False):
        known = set(map(tuple, ds.all_triples().tolist())) if filter_known else None
        head_prob = bernoulli_head_prob(ds) if side_mode == "bernoulli" else None
        return cls(ds.vocab, ds.signatures, seed, side_mode, known, head_prob)

    def choose_side(self, relation: int) -> CorruptionSide:
        if self.side_mode == "uniform":
            return CorruptionSide.HEAD if self.rng.randbelow(2) == 0 else CorruptionSide.TAIL
        p = self.head_prob.get(relation, 0.5)
        return CorruptionSide.HEAD if self.rng.random() < p else CorruptionSide.TAIL

    def corrupt_ids(self, h: int, r: int, t: int) -> tuple[int, int]:
        """Corrupt raw ids; returns the negative ``(h', t')``."""
        sig = self.signatures[r]
        n_head, n_tail = self.pool_sizes[sig.domain], self.pool_sizes[sig.range]
        if n_head < 2 and n_tail < 2:
            raise UnsampleableTriple(f"relation {r}: both entity pools have a single member")
        side = self.choose_side(r)
        if side is CorruptionSide.HEAD and n_head < 2:
            side = CorruptionSide.TAIL
        elif side is CorruptionSide.TAIL and n_tail < 2:
            side = CorruptionSide.HEAD
        sides = [side]
        other = CorruptionSide.TAIL if side is CorruptionSide.HEAD else CorruptionSide.HEAD
        if (n_head if other is CorruptionSide.HEAD else n_tail) >= 2:
            # only reachable when known-triple filtering exhausts the first side
            sides.append(other)
        for side in sides:
            for _ in range(MAX_RESAMPLE):
                if side is CorruptionSide.HEAD:
                    cand = self.rng.randbelow(n_head)
                    if cand == h:
                        continue
                    neg = (cand, t)
                else:
                    cand = self.rng.randbelow(n_tail)
                    if cand == t:
                        continue
                    neg = (h, cand)
                if self.known is not None and (neg[0], r, neg[1]) in self.known:
                    continue
                return neg
        raise UnsampleableTriple(f"no valid corruption after {MAX_RESAMPLE} attempts for ({h}, {r}, {t})")

    def corrupt(self, positive: TypedTriple) -> TypedTriple:
        h2, t2 = self.corrupt_ids(positive.head.entity, positive.relation, positive.tail.entity)
        return TypedTriple(
            EntityRef(positive.head.type, h2), positive.relation, EntityRef(positive.tail.type, t2)
        )


def bernoulli_head_prob(ds: DatasetSplits) -> dict[int, float]:
    """P(corrupt head) = tph / (tph + hpt) per relation over the learn split."""
    out = {}
    for rid in ds.signatures:
        rows = ds.learn[ds.learn[:, 1] == rid]
        if len(rows) == 0:
            out[rid] = 0.5
            continue
        tph = len(rows) / len(np.unique(rows[:, 0]))
        hpt = len(rows) / len(np.unique(rows[:, 2]))
        out[rid] = tph / (tph + hpt)
    return out

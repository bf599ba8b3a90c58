"""Deterministic synthetic categorized KG for self-tests and smoke sweeps.

Three types (``item``, ``group``, ``tag``) and three relations:

* ``inGroup``   item -> group, functional: item i goes to group ``i % 2``.
* ``nextOf``    item -> item, one-to-one: item i to item ``(i + 2) % n``.
* ``relatedTo`` item -> tag, many-to-many: each item links to 1-3 distinct
  tags of its own parity.

``n`` is ``entities_per_type`` items; the tag type is a small hub set of
``max(4, n // 10)`` entities so that items of equal parity share
neighbours. Both the one-to-one and the many-to-many relation preserve
parity, which is what makes a held-out ``inGroup`` fact recoverable.
"""

from __future__ import annotations

import math

import numpy as np

from .kg import DatasetSplits, RelationSignature, Vocabulary, build_dataset

FUNCTIONAL_RELATION = "inGroup"
SPLIT_FRACTIONS = (0.80, 0.05, 0.05)  # learn, valid, tune; test takes the remainder


def tag_count(entities_per_type: int) -> int:
    return max(4, entities_per_type // 10)


def generate_synthetic(entities_per_type: int, seed: int) -> DatasetSplits:
    n = entities_per_type
    if n < 4:
        raise ValueError("entities_per_type must be >= 4")
    rng = np.random.default_rng(seed)
    n_tags = tag_count(n)
    vocab = Vocabulary()
    for i in range(n):
        vocab.add_entity("item", f"i{i:05d}")
    for name in ("even", "odd"):
        vocab.add_entity("group", name)
    for j in range(n_tags):
        vocab.add_entity("tag", f"t{j:04d}")
    item, group, tag = (vocab.types.id(t) for t in ("item", "group", "tag"))
    r_group = vocab.relations.add(FUNCTIONAL_RELATION)
    r_next = vocab.relations.add("nextOf")
    r_rel = vocab.relations.add("relatedTo")
    signatures = {
        r_group: RelationSignature(r_group, item, group),
        r_next: RelationSignature(r_next, item, item),
        r_rel: RelationSignature(r_rel, item, tag),
    }

    rows = []
    for i in range(n):
        rows.append((i, r_group, i % 2))
        rows.append((i, r_next, (i + 2) % n))
    pools = [np.arange(p, n_tags, 2) for p in (0, 1)]
    for i in range(n):
        pool = pools[i % 2]
        fan_out = int(rng.integers(1, 4))
        for j in rng.choice(pool, size=min(fan_out, len(pool)), replace=False):
            rows.append((i, r_rel, int(j)))
    triples = np.array(rows, dtype=np.int64)
    triples = triples[rng.permutation(len(triples))]

    total = len(triples)
    n_learn = math.floor(SPLIT_FRACTIONS[0] * total)
    n_valid = math.floor(SPLIT_FRACTIONS[1] * total)
    n_tune = math.floor(SPLIT_FRACTIONS[2] * total)
    a, b, c = n_learn, n_learn + n_valid, n_learn + n_valid + n_tune
    return build_dataset(
        vocab,
        signatures,
        learn=triples[:a],
        valid=triples[a:b],
        tune=triples[b:c],
        test=triples[c:],
        label=f"synthetic-{n}-{seed}",
    )

"""Categorized triples: parsing, vocabularies, relation signatures and splits.

On disk a dataset is UTF-8 text, one triple per line, three tab-separated
fields ``type:name<TAB>relation<TAB>type:name``. Lines starting with ``#``
and blank lines are skipped. Entity fields are split on the first ``:`` only,
so names such as ``icd:A09.0:x`` keep their punctuation.

In memory a split is an ``(n, 3)`` int64 array of
``(head_entity, relation, tail_entity)``. The entity types are implied by the
relation signature, which is why the array does not carry them.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import numpy as np

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("learn", "valid", "tune", "test")


class KGError(Exception):
    """Base class for dataset problems."""


class ParseError(KGError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line = line
        self.source = source


class SignatureConflictError(KGError):
    def __init__(self, relation: str, slot: str, first: str, second: str):
        super().__init__(
            f"relation {relation!r} has conflicting {slot} types: {first!r} vs {second!r}"
        )
        self.relation = relation
        self.slot = slot
        self.types = (first, second)


class EntityRef(NamedTuple):
    type: int
    entity: int


class TypedTriple(NamedTuple):
    head: EntityRef
    relation: int
    tail: EntityRef


class Cardinality(str, Enum):
    ONE_TO_ONE = "one-to-one"
    MANY_TO_ONE = "many-to-one"
    ONE_TO_MANY = "one-to-many"
    MANY_TO_MANY = "many-to-many"


@dataclass
class RelationSignature:
    relation: int
    domain: int
    range: int
    cardinality: Cardinality | None = None


class _Table:
    """Bijective name <-> dense id table, ids assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KeyError(f"unknown name {name!r}") from None

    def name(self, idx: int) -> str:
        if not 0 <= idx < len(self._names):
            raise IndexError(f"id {idx} out of range [0, {len(self._names)})")
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return list(self._names)


class Vocabulary:
    """Type, relation and per-type entity tables."""

    def __init__(self):
        self.types = _Table()
        self.relations = _Table()
        self.entities: list[_Table] = []

    def add_type(self, name: str) -> int:
        tid = self.types.add(name)
        while len(self.entities) <= tid:
            self.entities.append(_Table())
        return tid

    def add_entity(self, type_name: str, name: str) -> EntityRef:
        tid = self.add_type(type_name)
        return EntityRef(tid, self.entities[tid].add(name))

    def entity_count(self, type_id: int) -> int:
        self._check_type(type_id)
        return len(self.entities[type_id])

    def entity_name(self, ref: EntityRef) -> str:
        self._check_type(ref.type)
        return f"{self.types.name(ref.type)}:{self.entities[ref.type].name(ref.entity)}"

    def entity_ref(self, qualified: str) -> EntityRef:
        type_name, _, name = qualified.partition(":")
        tid = self.types.id(type_name)
        return EntityRef(tid, self.entities[tid].id(name))

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_entities(self) -> int:
        return sum(len(t) for t in self.entities)

    def _check_type(self, type_id: int) -> None:
        if not 0 <= type_id < len(self.types):
            raise KGError(f"unknown type id {type_id}")


def entities_of_type(vocab: Vocabulary, type_id: int) -> range:
    """Contiguous entity id range of one type."""
    return range(vocab.entity_count(type_id))


def _split_entity(field_text: str, lineno: int, source: str | None) -> tuple[str, str]:
    type_name, sep, name = field_text.partition(":")
    if not sep or not type_name or not name:
        raise ParseError(f"entity field {field_text!r} is not of the form type:name", lineno, source)
    return type_name, name


def _parse_into(
    stream: TextIO,
    vocab: Vocabulary,
    signatures: dict[int, RelationSignature],
    source: str | None = None,
) -> list[TypedTriple]:
    triples = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, source)
        (ht, hn), rel_name, (tt, tn) = (
            _split_entity(fields[0], lineno, source),
            fields[1],
            _split_entity(fields[2], lineno, source),
        )
        if not rel_name:
            raise ParseError("empty relation field", lineno, source)
        if rel_name in vocab.relations:
            rid = vocab.relations.id(rel_name)
            sig = signatures[rid]
            dom, rng = vocab.types.name(sig.domain), vocab.types.name(sig.range)
            if ht != dom:
                raise SignatureConflictError(rel_name, "domain", dom, ht)
            if tt != rng:
                raise SignatureConflictError(rel_name, "range", rng, tt)
        head = vocab.add_entity(ht, hn)
        tail = vocab.add_entity(tt, tn)
        if rel_name not in vocab.relations:
            rid = vocab.relations.add(rel_name)
            signatures[rid] = RelationSignature(rid, head.type, tail.type)
        triples.append(TypedTriple(head, rid, tail))
    return triples


def parse_triples(
    source: TextIO | str,
) -> tuple[list[TypedTriple], Vocabulary, dict[int, RelationSignature]]:
    """Parse one triple stream (or a string holding the text).

    Signatures are inferred from the first occurrence of each relation; a
    later triple with a different head or tail type raises
    :class:`SignatureConflictError`.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    vocab = Vocabulary()
    signatures: dict[int, RelationSignature] = {}
    triples = _parse_into(source, vocab, signatures)
    return triples, vocab, signatures


def triples_to_array(triples: list[TypedTriple]) -> np.ndarray:
    if not triples:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array([(t.head.entity, t.relation, t.tail.entity) for t in triples], dtype=np.int64)


@dataclass
class DatasetSplits:
    vocab: Vocabulary
    signatures: dict[int, RelationSignature]
    learn: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    tune: np.ndarray | None = None
    label: str = "dataset"
    warnings: list[str] = field(default_factory=list)

    def split(self, name: str) -> np.ndarray | None:
        if name not in SPLIT_NAMES:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def splits(self) -> dict[str, np.ndarray]:
        """Present splits in canonical order (absent tuning split omitted)."""
        return {n: a for n in SPLIT_NAMES if (a := getattr(self, n)) is not None}

    def all_triples(self) -> np.ndarray:
        return np.concatenate(list(self.splits().values()), axis=0)

    def typed(self, row) -> TypedTriple:
        h, r, t = (int(x) for x in row)
        sig = self.signatures[r]
        return TypedTriple(EntityRef(sig.domain, h), r, EntityRef(sig.range, t))

    def typed_triples(self, name: str) -> list[TypedTriple]:
        arr = self.split(name)
        return [] if arr is None else [self.typed(row) for row in arr]

    @property
    def has_tuning(self) -> bool:
        return self.tune is not None and len(self.tune) > 0


def _infer_cardinality(signatures: dict[int, RelationSignature], learn: np.ndarray) -> None:
    # mean tails-per-head / heads-per-tail over LRN, 1.5 threshold
    for rid, sig in signatures.items():
        rows = learn[learn[:, 1] == rid] if len(learn) else learn
        if len(rows) == 0:
            sig.cardinality = None
            continue
        pairs = np.unique(rows[:, [0, 2]], axis=0)
        tph = len(pairs) / len(np.unique(pairs[:, 0]))
        hpt = len(pairs) / len(np.unique(pairs[:, 1]))
        many_tails, many_heads = tph >= 1.5, hpt >= 1.5
        sig.cardinality = {
            (False, False): Cardinality.ONE_TO_ONE,
            (False, True): Cardinality.MANY_TO_ONE,
            (True, False): Cardinality.ONE_TO_MANY,
            (True, True): Cardinality.MANY_TO_MANY,
        }[(many_tails, many_heads)]


def _validate_splits(ds: DatasetSplits) -> None:
    def key_set(arr):
        return set(map(tuple, arr.tolist()))

    present = ds.splits()
    sets = {name: key_set(arr) for name, arr in present.items()}
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = sets[a] & sets[b]
            if shared:
                ds.warnings.append(f"splits {a} and {b} share {len(shared)} triple(s)")

    seen = [set() for _ in range(ds.vocab.n_types)]
    for h, r, t in ds.learn.tolist():
        sig = ds.signatures[r]
        seen[sig.domain].add(h)
        seen[sig.range].add(t)
    for name, arr in present.items():
        if name == "learn":
            continue
        unseen = 0
        for h, r, t in arr.tolist():
            sig = ds.signatures[r]
            unseen += (h not in seen[sig.domain]) + (t not in seen[sig.range])
        if unseen:
            ds.warnings.append(f"split {name} references {unseen} entity slot(s) absent from learn")
    for w in ds.warnings:
        logger.warning("%s: %s", ds.label, w)


def build_dataset(
    vocab: Vocabulary,
    signatures: dict[int, RelationSignature],
    learn: np.ndarray,
    valid: np.ndarray,
    test: np.ndarray,
    tune: np.ndarray | None = None,
    label: str = "dataset",
) -> DatasetSplits:
    ds = DatasetSplits(vocab, signatures, learn, valid, test, tune, label)
    _infer_cardinality(signatures, learn)
    _validate_splits(ds)
    return ds


def _open_source(src) -> tuple[TextIO, str, bool]:
    if isinstance(src, (str, os.PathLike)):
        return open(src, encoding="utf-8"), str(src), True
    return src, getattr(src, "name", "<stream>"), False


def load_dataset(learn, valid, test, tune=None, label: str = "dataset") -> DatasetSplits:
    """Parse up to four sources into splits over one shared vocabulary.

    Sources may be paths or open text streams.
    """
    vocab = Vocabulary()
    signatures: dict[int, RelationSignature] = {}
    arrays = {}
    for name, src in (("learn", learn), ("valid", valid), ("tune", tune), ("test", test)):
        if src is None:
            arrays[name] = None
            continue
        stream, where, close = _open_source(src)
        try:
            arrays[name] = triples_to_array(_parse_into(stream, vocab, signatures, where))
        finally:
            if close:
                stream.close()
    return build_dataset(
        vocab, signatures, arrays["learn"], arrays["valid"], arrays["test"], arrays["tune"], label
    )


def read_manifest(path) -> dict[str, Path]:
    """Read a ``key=value`` manifest with keys learn, valid, tune (optional), test."""
    path = Path(path)
    entries: dict[str, Path] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not value:
                raise ParseError(f"expected key=value, got {line!r}", lineno, str(path))
            if key == "label":
                continue
            if key not in SPLIT_NAMES:
                raise ParseError(f"unknown manifest key {key!r}", lineno, str(path))
            p = Path(value)
            entries[key] = p if p.is_absolute() else path.parent / p
    missing = [k for k in ("learn", "valid", "test") if k not in entries]
    if missing:
        raise ParseError(f"manifest lacks required key(s): {', '.join(missing)}", source=str(path))
    return entries


def _manifest_label(path: Path) -> str:
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            key, sep, value = raw.strip().partition("=")
            if sep and key.strip() == "label":
                return value.strip()
    return path.parent.name or path.stem


def load_manifest(path) -> DatasetSplits:
    path = Path(path)
    files = read_manifest(path)
    return load_dataset(
        files["learn"], files["valid"], files["test"], files.get("tune"), label=_manifest_label(path)
    )


def format_triples(ds: DatasetSplits, arr: np.ndarray) -> str:
    lines = []
    for row in arr:
        t = ds.typed(row)
        lines.append(
            f"{ds.vocab.entity_name(t.head)}\t{ds.vocab.relations.name(t.relation)}\t"
            f"{ds.vocab.entity_name(t.tail)}\n"
        )
    return "".join(lines)


def write_dataset(ds: DatasetSplits, directory) -> Path:
    """Write each split as a triple file plus ``manifest.txt``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = [f"label={ds.label}"]
    for name, arr in ds.splits().items():
        (directory / f"{name}.tsv").write_text(format_triples(ds, arr), encoding="utf-8")
        manifest.append(f"{name}={name}.tsv")
    out = directory / "manifest.txt"
    out.write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return out


@dataclass
class DatasetStats:
    label: str
    entities: int
    relations: int
    types: int
    triples: int
    split_triples: dict[str, int | None]

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("entities", str(self.entities)),
            ("relations", str(self.relations)),
            ("types", str(self.types)),
            ("triples", str(self.triples)),
        ]
        for name in SPLIT_NAMES:
            n = self.split_triples.get(name)
            out.append((name, "n/a" if n is None else str(n)))
        return out


def dataset_stats(ds: DatasetSplits | None) -> DatasetStats:
    if ds is None:
        return DatasetStats("empty", 0, 0, 0, 0, {n: 0 for n in SPLIT_NAMES})
    counts = {n: (None if (a := getattr(ds, n)) is None else len(a)) for n in SPLIT_NAMES}
    return DatasetStats(
        label=ds.label,
        entities=ds.vocab.n_entities,
        relations=ds.vocab.n_relations,
        types=ds.vocab.n_types,
        triples=sum(c for c in counts.values() if c),
        split_triples=counts,
    )

"""Sentence-scoped entity and entity-pair context extraction.

An ENTITY unit holds the sentence tokens around one entity (its own mention
tokens removed). A PAIR unit holds the tokens separating two co-occurring
entities. Both are the indexable documents of :mod:`relink.erindex`.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .corpus import (
    AnnotatedDocument,
    EntityAnnotation,
    Sentence,
    annotations_in_sentence,
    count_straddling,
    segment_sentences,
)


class Kind(enum.Enum):
    ENTITY = "ENTITY"
    PAIR = "PAIR"


class EntityKey(NamedTuple):
    entity_id: str


class PairKey(NamedTuple):
    first: str
    second: str


GroupKey = tuple  # EntityKey | PairKey


class DumpError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def unit_id_for(doc_id: str, sent_index: int, kind: Kind, key: tuple[str, ...]) -> int:
    """Stable unsigned 64-bit id derived from the unit's identity."""
    payload = "\x1f".join([doc_id, str(sent_index), kind.value, *key]).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExtractionUnit:
    unit_id: int
    kind: Kind
    key: tuple[str, ...]
    terms: tuple[str, ...]
    doc_id: str
    sent_index: int

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def make(cls, kind: Kind, key: tuple[str, ...], terms: Iterable[str],
             doc_id: str, sent_index: int) -> "ExtractionUnit":
        key = EntityKey(*key) if kind is Kind.ENTITY else PairKey(*key)
        return cls(unit_id_for(doc_id, sent_index, kind, key), kind, key, tuple(terms),
                   doc_id, sent_index)

    def to_record(self) -> dict:
        return {"unit_id": self.unit_id, "kind": self.kind.value, "key": list(self.key),
                "terms": list(self.terms), "doc_id": self.doc_id, "sent_index": self.sent_index}

    @classmethod
    def from_record(cls, rec: dict) -> "ExtractionUnit":
        kind = Kind(rec["kind"])
        key = tuple(rec["key"])
        if kind is Kind.ENTITY and len(key) != 1 or kind is Kind.PAIR and len(key) != 2:
            raise ValueError(f"{kind.value} unit with key of arity {len(key)}")
        if not all(isinstance(k, str) and k for k in key):
            raise ValueError("key entries must be non-empty strings")
        if kind is Kind.PAIR and key[0] == key[1]:
            raise ValueError("PAIR key entities must differ")
        unit = cls.make(kind, key, rec["terms"], rec["doc_id"], int(rec["sent_index"]))
        if "unit_id" in rec and int(rec["unit_id"]) != unit.unit_id:
            raise ValueError(f"unit_id {rec['unit_id']} does not match its content")
        return unit


@dataclass
class ExtractionConfig:
    # separating-string cutoff in tokens; pairs further apart are not emitted
    max_separation: float = math.inf
    stopwords: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        sep = None if math.isinf(self.max_separation) else int(self.max_separation)
        return {"max_separation": sep, "stopwords": sorted(self.stopwords)}


@dataclass
class ExtractionStats:
    documents: int = 0
    sentences: int = 0
    entity_units: int = 0
    pair_units: int = 0
    straddling_annotations: int = 0
    per_sentence_entities: list[int] = field(default_factory=list)


def _overlaps(tb: int, te: int, a: EntityAnnotation) -> bool:
    return tb < a.end and a.begin < te


def _mentions(doc: AnnotatedDocument, s: Sentence) -> dict[str, list[EntityAnnotation]]:
    by_entity: dict[str, list[EntityAnnotation]] = {}
    for a in annotations_in_sentence(doc, s):
        by_entity.setdefault(a.entity_id, []).append(a)
    return by_entity


def _entity_units_for_sentence(doc, s, mentions) -> list[ExtractionUnit]:
    units = []
    for ent, spans in mentions.items():
        terms = [t.term for t in s.tokens
                 if not any(_overlaps(t.begin, t.end, a) for a in spans)]
        units.append(ExtractionUnit.make(Kind.ENTITY, (ent,), terms, doc.doc_id, s.sent_index))
    return units


def _separation(s: Sentence, x: EntityAnnotation, y: EntityAnnotation):
    """Tokens strictly between two mentions, plus a sort key for closeness."""
    first, last = (x, y) if (x.begin, x.end) <= (y.begin, y.end) else (y, x)
    lo, hi = first.end, last.begin
    between = [t.term for t in s.tokens if t.begin >= lo and t.end <= hi]
    return between, (len(between), max(hi - lo, 0), first.begin, last.begin)


def _pair_units_for_sentence(doc, s, mentions, max_separation) -> list[ExtractionUnit]:
    # mentions preserves first-occurrence order, which fixes pair orientation
    units = []
    for a, b in itertools.combinations(mentions, 2):
        best = min((_separation(s, x, y) for x in mentions[a] for y in mentions[b]),
                   key=lambda r: r[1])
        terms = best[0]
        if len(terms) > max_separation:
            continue
        units.append(ExtractionUnit.make(Kind.PAIR, (a, b), terms, doc.doc_id, s.sent_index))
    return units


def extract_entity_units(doc: AnnotatedDocument, sentences: list[Sentence]) -> list[ExtractionUnit]:
    units = []
    for s in sentences:
        units.extend(_entity_units_for_sentence(doc, s, _mentions(doc, s)))
    return units


def extract_pair_units(doc: AnnotatedDocument, sentences: list[Sentence],
                       max_separation: float = math.inf) -> list[ExtractionUnit]:
    units = []
    for s in sentences:
        units.extend(_pair_units_for_sentence(doc, s, _mentions(doc, s), max_separation))
    return units


def extract_document(doc: AnnotatedDocument, config: ExtractionConfig | None = None,
                     stats: ExtractionStats | None = None) -> list[ExtractionUnit]:
    """Segment one document and return its ENTITY units followed by its PAIR units."""
    config = config or ExtractionConfig()
    sentences = segment_sentences(doc, config.stopwords)
    units: list[ExtractionUnit] = []
    n_ent = n_pair = 0
    for s in sentences:
        mentions = _mentions(doc, s)
        ents = _entity_units_for_sentence(doc, s, mentions)
        pairs = _pair_units_for_sentence(doc, s, mentions, config.max_separation)
        units.extend(ents)
        units.extend(pairs)
        n_ent += len(ents)
        n_pair += len(pairs)
        if stats is not None:
            stats.per_sentence_entities.append(len(mentions))
    if stats is not None:
        stats.documents += 1
        stats.sentences += len(sentences)
        stats.entity_units += n_ent
        stats.pair_units += n_pair
        stats.straddling_annotations += count_straddling(doc, sentences)
    return units


def extract_corpus(docs: Iterable[AnnotatedDocument], config: ExtractionConfig | None = None,
                   stats: ExtractionStats | None = None) -> Iterator[ExtractionUnit]:
    for doc in docs:
        yield from extract_document(doc, config, stats)


def write_dump(units: Iterable[ExtractionUnit], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for u in units:
            fh.write(json.dumps(u.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_dump(path: str | Path) -> Iterator[ExtractionUnit]:
    """Read an extraction dump; malformed lines raise :class:`DumpError`."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield ExtractionUnit.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DumpError(lineno, f"bad extraction record: {exc}") from None

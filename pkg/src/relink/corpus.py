"""Annotated documents, JSONL corpus ingestion and sentence segmentation.

Offsets everywhere are UTF-8 byte offsets into ``AnnotatedDocument.text``.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


class CorpusError(Exception):
    """Fatal corpus problem (unreadable file, invalid record in strict mode)."""


class RecordError(CorpusError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class EntityAnnotation:
    entity_id: str
    begin: int
    end: int
    surface: str


@dataclass(frozen=True)
class AnnotatedDocument:
    doc_id: str
    text: str
    annotations: tuple[EntityAnnotation, ...] = ()

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "annotations": [
                {"entity": a.entity_id, "begin": a.begin, "end": a.end, "surface": a.surface}
                for a in self.annotations
            ],
        }


@dataclass(frozen=True)
class Token:
    term: str
    begin: int
    end: int


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    sent_index: int
    begin: int
    end: int
    tokens: tuple[Token, ...]

    @property
    def terms(self) -> list[str]:
        return [t.term for t in self.tokens]


@dataclass
class IngestConfig:
    """``on_error`` is ``"fail"`` (raise on the first bad record) or ``"skip"``."""

    on_error: str = "fail"
    stopwords: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.on_error not in ("fail", "skip"):
            raise ValueError(f"on_error must be 'fail' or 'skip', got {self.on_error!r}")
        self.stopwords = frozenset(self.stopwords)

    def to_dict(self) -> dict:
        return {"on_error": self.on_error, "stopwords": sorted(self.stopwords)}


@dataclass
class IngestReport:
    documents: int = 0
    errors: list[RecordError] = field(default_factory=list)


# -- tokenization -----------------------------------------------------------

def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _byte_offsets(text: str) -> list[int]:
    """offsets[i] is the byte offset of character i; offsets[len(text)] the total."""
    offsets = [0] * (len(text) + 1)
    pos = 0
    for i, ch in enumerate(text):
        offsets[i] = pos
        pos += len(ch.encode("utf-8"))
    offsets[len(text)] = pos
    return offsets


def _tokens_in(text: str, start: int, stop: int, offsets: list[int],
               stopwords: frozenset[str]) -> list[Token]:
    tokens = []
    for m in re.finditer(r"\S+", text[start:stop]):
        b, e = m.start() + start, m.end() + start
        while b < e and _is_punct(text[b]):
            b += 1
        while e > b and _is_punct(text[e - 1]):
            e -= 1
        if b == e:
            continue
        term = text[b:e].lower()
        if term in stopwords:
            continue
        tokens.append(Token(term, offsets[b], offsets[e]))
    return tokens


def normalize_terms(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Tokenize free text exactly the way sentence tokens are produced."""
    offsets = _byte_offsets(text)
    return [t.term for t in _tokens_in(text, 0, len(text), offsets, frozenset(stopwords))]


# -- segmentation -----------------------------------------------------------

def segment_sentences(doc: AnnotatedDocument,
                      stopwords: Iterable[str] = ()) -> list[Sentence]:
    """Split on ``.``, ``!`` or ``?`` followed by whitespace or end of text.

    No abbreviation handling: ``"Dr. Who"`` is two sentences.
    """
    text = doc.text
    offsets = _byte_offsets(text)
    stop = frozenset(stopwords)
    cuts = [m.end() for m in _SENTENCE_END.finditer(text)]
    if not cuts or cuts[-1] != len(text):
        cuts.append(len(text))
    sentences = []
    start = 0
    for cut in cuts:
        b, e = start, cut
        while b < e and text[b].isspace():
            b += 1
        while e > b and text[e - 1].isspace():
            e -= 1
        if b < e:
            sentences.append(Sentence(doc.doc_id, len(sentences), offsets[b], offsets[e],
                                      tuple(_tokens_in(text, b, e, offsets, stop))))
        start = cut
    return sentences


def annotations_in_sentence(doc: AnnotatedDocument, s: Sentence) -> list[EntityAnnotation]:
    return [a for a in doc.annotations if s.begin <= a.begin and a.end <= s.end]


def count_straddling(doc: AnnotatedDocument, sentences: list[Sentence]) -> int:
    """Annotations not contained in any single sentence."""
    inside = set()
    for s in sentences:
        inside.update(id(a) for a in annotations_in_sentence(doc, s))
    return sum(1 for a in doc.annotations if id(a) not in inside)


# -- ingestion --------------------------------------------------------------

def parse_document(record: dict, line: int = 0) -> AnnotatedDocument:
    """Validate one decoded JSON record. Raises :class:`RecordError`."""
    if not isinstance(record, dict):
        raise RecordError(line, "record is not a JSON object")
    doc_id = record.get("doc_id")
    text = record.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise RecordError(line, "doc_id must be a non-empty string")
    if not isinstance(text, str):
        raise RecordError(line, "text must be a string")
    raw = text.encode("utf-8")
    anns = []
    for i, a in enumerate(record.get("annotations", [])):
        try:
            ent, begin, end, surface = a["entity"], a["begin"], a["end"], a["surface"]
        except (KeyError, TypeError):
            raise RecordError(line, f"annotation {i} lacks entity/begin/end/surface") from None
        if not isinstance(ent, str) or not ent:
            raise RecordError(line, f"annotation {i}: empty entity id")
        if type(begin) is not int or type(end) is not int:
            raise RecordError(line, f"annotation {i}: offsets must be integers")
        if not 0 <= begin < end <= len(raw):
            raise RecordError(line, f"annotation {i}: span [{begin}, {end}) outside text of "
                                    f"{len(raw)} bytes")
        try:
            actual = raw[begin:end].decode("utf-8")
        except UnicodeDecodeError:
            raise RecordError(line, f"annotation {i}: span not on character boundaries") from None
        if actual != surface:
            raise RecordError(line, f"annotation {i}: surface {surface!r} != text {actual!r}")
        anns.append(EntityAnnotation(ent, begin, end, surface))
    anns.sort(key=lambda a: (a.begin, -a.end, a.entity_id))
    # nested or disjoint only; check every pair that starts inside an earlier span
    for i, x in enumerate(anns):
        for y in anns[i + 1:]:
            if y.begin >= x.end:
                break
            if y.end > x.end:
                raise RecordError(line, f"annotations [{x.begin}, {x.end}) and "
                                        f"[{y.begin}, {y.end}) partially overlap")
    return AnnotatedDocument(doc_id, text, tuple(anns))


def ingest_corpus(path: str | Path, config: IngestConfig | None = None,
                  report: IngestReport | None = None) -> Iterator[AnnotatedDocument]:
    """Stream documents from a JSONL corpus file in file order.

    Bad records raise :class:`RecordError` under ``on_error="fail"``; under
    ``"skip"`` they are logged and collected in ``report.errors``.
    Duplicate ``doc_id`` values count as bad records.
    """
    config = config or IngestConfig()
    report = report if report is not None else IngestReport()
    path = Path(path)
    try:
        fh = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    seen: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RecordError(lineno, f"invalid JSON: {exc.msg}") from None
                doc = parse_document(record, lineno)
                if doc.doc_id in seen:
                    raise RecordError(lineno, f"duplicate doc_id {doc.doc_id!r}")
            except RecordError as err:
                if config.on_error == "fail":
                    raise
                logger.warning("skipping record: %s", err)
                report.errors.append(err)
                continue
            seen.add(doc.doc_id)
            report.documents += 1
            yield doc


def write_corpus(docs: Iterable[AnnotatedDocument], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")

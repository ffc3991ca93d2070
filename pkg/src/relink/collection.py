"""Test-collection generation from relational tables, and collection I/O.

Tables are read in a normalized JSON form (one table per file)::

    {"table_id": ..., "page_title": ..., "topic_area": ..., "section_title": ...,
     "intro_text": ..., "columns": [{"header": ...}, ...],
     "rows": [[{"text": ..., "entity": ...}, ...], ...]}

The key column anchors every generated relationship; each row whose
participating cells are all entity-linked becomes one relevance judgment.
"""

from __future__ import annotations

import json
import logging
import random
import re
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

_QUERY_ID = re.compile(r"^RELink_([PT])_")
_ARITY_OF_SCHEME = {"P": 3, "T": 5}


class CollectionError(ValueError):
    pass


class GenerationRefused(CollectionError):
    pass


@dataclass(frozen=True)
class Cell:
    text: str
    entity_id: Optional[str] = None


@dataclass(frozen=True)
class ColumnSpec:
    header: str
    cells_linked_ratio: float


@dataclass
class SourceTable:
    table_id: str
    page_title: str
    columns: list[ColumnSpec]
    rows: list[list[Cell]]
    topic_area: str = ""
    section_title: str = ""
    intro_text: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "SourceTable":
        headers = [c["header"] if isinstance(c, dict) else str(c) for c in d["columns"]]
        rows = []
        for i, row in enumerate(d.get("rows", [])):
            if len(row) != len(headers):
                raise CollectionError(f"table {d.get('table_id')}: row {i} has {len(row)} cells, "
                                      f"expected {len(headers)}")
            cells = []
            for c in row:
                if isinstance(c, str):
                    c = {"text": c}
                ent = c.get("entity") or None
                cells.append(Cell(c.get("text", ""), ent))
            rows.append(cells)
        columns = [ColumnSpec(h, _linked_ratio([r[j] for r in rows]))
                   for j, h in enumerate(headers)]
        return cls(d["table_id"], d.get("page_title", ""), columns, rows,
                   d.get("topic_area", ""), d.get("section_title", ""), d.get("intro_text", ""))

    def column(self, j: int) -> list[Cell]:
        return [r[j] for r in self.rows]


def _linked_ratio(cells: Sequence[Cell]) -> float:
    non_empty = [c for c in cells if c.text.strip()]
    if not non_empty:
        return 0.0
    return sum(1 for c in non_empty if c.entity_id) / len(non_empty)


def load_table(path: str | Path) -> SourceTable:
    with Path(path).open(encoding="utf-8") as fh:
        return SourceTable.from_dict(json.load(fh))


def load_tables(directory: str | Path) -> list[SourceTable]:
    """Every ``*.json`` table in ``directory``, sorted by file name."""
    tables = [load_table(p) for p in sorted(Path(directory).glob("*.json"))]
    ids = [t.table_id for t in tables]
    if len(set(ids)) != len(ids):
        raise CollectionError("duplicate table_id in table directory")
    return tables


# -- key column -------------------------------------------------------------

@dataclass
class KeyColumnConfig:
    min_unique_ratio: float = 0.8
    min_avg_length: float = 3.0
    max_avg_length: float = 200.0
    min_non_empty_ratio: float = 0.9


def detect_key_column(table: SourceTable, config: KeyColumnConfig | None = None) -> Optional[int]:
    """Leftmost column that is mostly unique, mostly filled and of name-like length."""
    config = config or KeyColumnConfig()
    if len(table.columns) < 2 or len(table.rows) < 2:
        return None
    for j in range(len(table.columns)):
        texts = [c.text.strip() for c in table.column(j)]
        filled = [t for t in texts if t]
        if not filled or len(filled) / len(texts) < config.min_non_empty_ratio:
            continue
        if len(set(filled)) / len(filled) < config.min_unique_ratio:
            continue
        avg = sum(len(t) for t in filled) / len(filled)
        if config.min_avg_length <= avg <= config.max_avg_length:
            return j
    return None


# -- records ----------------------------------------------------------------

@dataclass
class QueryRecord:
    query_id: str
    nl_text: str
    components: list[str]
    source_table: Optional[str] = None

    @property
    def arity(self) -> int:
        return (len(self.components) + 1) // 2

    @property
    def entity_types(self) -> list[str]:
        return self.components[0::2]

    @property
    def relationship_types(self) -> list[str]:
        return self.components[1::2]

    def to_dict(self) -> dict:
        d = {"query_id": self.query_id, "nl_text": self.nl_text, "components": self.components}
        if self.source_table is not None:
            d["source_table"] = self.source_table
        return d


@dataclass(frozen=True)
class QrelRecord:
    query_id: str
    tuple: tuple[str, ...]


def query_id_for(arity: int, number: int) -> str:
    return f"RELink_{'P' if arity == 2 else 'T'}_{number:03d}"


def validate_query(q: QueryRecord) -> None:
    n = len(q.components)
    if n < 3 or n % 2 == 0:
        raise CollectionError(f"{q.query_id}: component count must be odd and >= 3, got {n}")
    m = _QUERY_ID.match(q.query_id)
    if m and _ARITY_OF_SCHEME[m.group(1)] != n:
        raise CollectionError(f"{q.query_id}: id scheme implies {_ARITY_OF_SCHEME[m.group(1)]} "
                              f"components, got {n}")


# -- judgments --------------------------------------------------------------

@dataclass
class GenerationResult:
    query: QueryRecord
    qrels: list[QrelRecord]
    skipped_rows: int


def generate_judgments(table: SourceTable, key_col: int, other_cols: Sequence[int],
                       query_id: str = "", min_linked_ratio: float = 0.8) -> GenerationResult:
    """Build a query stub plus one judgment per fully linked row.

    Tuple order is the key column followed by ``other_cols`` in the given
    order. The stub's relationship slots and ``nl_text`` are left empty for
    an editor to fill in.
    """
    other_cols = list(other_cols)
    if len(other_cols) not in (1, 2):
        raise GenerationRefused("need one or two non-key columns")
    cols = [key_col, *other_cols]
    if len(set(cols)) != len(cols):
        raise GenerationRefused("key and non-key columns must be distinct")
    for j in cols:
        if not 0 <= j < len(table.columns):
            raise GenerationRefused(f"column {j} out of range")
        ratio = table.columns[j].cells_linked_ratio
        if ratio < min_linked_ratio:
            raise GenerationRefused(f"column {table.columns[j].header!r} has linked ratio "
                                    f"{ratio:.2f} < {min_linked_ratio}")
    arity = len(cols)
    qid = query_id or query_id_for(arity, 0)
    components: list[str] = []
    for j in cols:
        if components:
            components.append("")
        components.append(table.columns[j].header)
    stub = QueryRecord(qid, "", components, table.table_id)
    qrels, skipped = [], 0
    for row in table.rows:
        ents = [row[j].entity_id for j in cols]
        if all(ents):
            qrels.append(QrelRecord(qid, tuple(ents)))
        else:
            skipped += 1
    return GenerationResult(stub, qrels, skipped)


def eligible_columns(table: SourceTable, key_col: int, min_linked_ratio: float = 0.8) -> list[int]:
    """Non-key columns linked well enough to take part in a relationship."""
    return [j for j, c in enumerate(table.columns)
            if j != key_col and c.cells_linked_ratio >= min_linked_ratio]


def annotation_stub(table: SourceTable, query: QueryRecord, sample_rows: int = 5) -> dict:
    """Editor payload: table metadata, headers, chosen entity types and example rows."""
    return {
        "query_id": query.query_id,
        "source_table": table.table_id,
        "page_title": table.page_title,
        "section_title": table.section_title,
        "intro_text": table.intro_text,
        "topic_area": table.topic_area,
        "headers": [c.header for c in table.columns],
        "entity_types": query.entity_types,
        "sample_rows": [[c.text for c in row] for row in table.rows[:sample_rows]],
        "components": query.components,
        "nl_text": "",
    }


# -- sampling ---------------------------------------------------------------

def title_tokens(title: str) -> set[str]:
    out = set()
    for tok in title.lower().split():
        tok = "".join(ch for ch in tok if not unicodedata.category(ch).startswith("P"))
        if tok:
            out.add(tok)
    return out


def jaccard_title_similarity(title_a: str, title_b: str) -> float:
    a, b = title_tokens(title_a), title_tokens(title_b)
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def stratified_sample(tables: Sequence[SourceTable], target_count: int,
                      max_similarity: float = 0.7, seed: int = 0) -> list[SourceTable]:
    """Round-robin over sorted topic areas, admitting a table only if its
    title is strictly less similar than ``max_similarity`` to every title
    admitted so far."""
    if target_count <= 0:
        raise ValueError("target_count must be positive")
    rng = random.Random(seed)
    by_area: dict[str, list[SourceTable]] = defaultdict(list)
    for t in tables:
        by_area[t.topic_area].append(t)
    queues = []
    for area in sorted(by_area):
        pool = sorted(by_area[area], key=lambda t: t.table_id)
        rng.shuffle(pool)
        queues.append(pool)

    admitted: list[SourceTable] = []
    admitted_tokens: list[set[str]] = []

    def fits(t: SourceTable) -> bool:
        toks = title_tokens(t.page_title)
        for other in admitted_tokens:
            union = toks | other
            sim = len(toks & other) / len(union) if union else 0.0
            if sim >= max_similarity:
                return False
        return True

    while len(admitted) < target_count and any(queues):
        for q in queues:
            while q:
                cand = q.pop(0)
                if fits(cand):
                    admitted.append(cand)
                    admitted_tokens.append(title_tokens(cand.page_title))
                    break
            if len(admitted) == target_count:
                break
    if len(admitted) < target_count:
        logger.warning("stratified_sample: only %d of %d tables admitted", len(admitted),
                       target_count)
    return admitted


# -- query collection files -------------------------------------------------

def read_queries(path: str | Path) -> list[QueryRecord]:
    queries, seen = [], set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                q = QueryRecord(d["query_id"], d.get("nl_text", ""),
                                [str(c) for c in d["components"]], d.get("source_table"))
                validate_query(q)
            except (json.JSONDecodeError, KeyError, TypeError, CollectionError) as exc:
                raise CollectionError(f"{path}: line {lineno}: {exc}") from None
            if q.query_id in seen:
                raise CollectionError(f"{path}: line {lineno}: duplicate query_id {q.query_id}")
            seen.add(q.query_id)
            queries.append(q)
    return queries


def read_qrels(path: str | Path) -> list[QrelRecord]:
    """Lines ``qid 0 e1|e2|... rel``; rows with ``rel <= 0`` are dropped."""
    qrels = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise CollectionError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
            qid, _, tup, rel = parts
            try:
                rel = int(rel)
            except ValueError:
                raise CollectionError(f"{path}: line {lineno}: bad relevance {rel!r}") from None
            if rel > 0:
                qrels.append(QrelRecord(qid, tuple(tup.split("|"))))
    return qrels


def write_queries(queries: Iterable[QueryRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_dict(), ensure_ascii=False) + "\n")


def write_qrels(qrels: Iterable[QrelRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in qrels:
            fh.write(f"{r.query_id} 0 {'|'.join(r.tuple)} 1\n")


def load_qc(queries_path: str | Path, qrels_path: str | Path):
    """Load and cross-validate a query collection. Returns ``(queries, qrels)``."""
    queries = read_queries(queries_path)
    qrels = read_qrels(qrels_path)
    arity = {q.query_id: q.arity for q in queries}
    for r in qrels:
        if r.query_id not in arity:
            raise CollectionError(f"qrels reference unknown query {r.query_id}")
        if len(r.tuple) != arity[r.query_id]:
            raise CollectionError(f"arity mismatch for {r.query_id}: qrel tuple has "
                                  f"{len(r.tuple)} entities, query expects {arity[r.query_id]}")
    return queries, qrels


# -- statistics -------------------------------------------------------------

def _norm_type(s: str) -> str:
    return " ".join(s.lower().split())


@dataclass
class StatsColumn:
    total_queries: int = 0
    avg_query_length: float = 0.0
    avg_entity_length: float = 0.0
    avg_relationship_length: float = 0.0
    unique_entity_types: int = 0
    unique_relationship_types: int = 0
    avg_judgments: float = 0.0


@dataclass
class CollectionStatsReport:
    """Per-arity columns keyed ``"2-entity"``, ``"3-entity"`` and ``"all"``.

    Lengths are in characters.
    """

    columns: dict[str, StatsColumn] = field(default_factory=dict)

    ROWS = [
        ("total_queries", "Total queries"),
        ("avg_query_length", "Avg. query length (chars)"),
        ("avg_entity_length", "Avg. Q^E length (chars)"),
        ("avg_relationship_length", "Avg. Q^R length (chars)"),
        ("unique_entity_types", "# uniq. entity types (Q^E)"),
        ("unique_relationship_types", "# uniq. relationship types (Q^R)"),
        ("avg_judgments", "Avg. # relevant judgments"),
    ]

    def to_tsv(self) -> str:
        names = list(self.columns)
        lines = ["statistic\t" + "\t".join(names)]
        for attr, label in self.ROWS:
            vals = []
            for n in names:
                v = getattr(self.columns[n], attr)
                vals.append(str(v) if isinstance(v, int) else f"{v:.1f}")
            lines.append(label + "\t" + "\t".join(vals))
        return "\n".join(lines) + "\n"


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def collection_stats(queries: Sequence[QueryRecord],
                     qrels: Sequence[QrelRecord]) -> CollectionStatsReport:
    judged: dict[str, int] = defaultdict(int)
    for r in qrels:
        judged[r.query_id] += 1
    subsets = {
        "2-entity": [q for q in queries if q.arity == 2],
        "3-entity": [q for q in queries if q.arity == 3],
        "all": list(queries),
    }
    report = CollectionStatsReport()
    for name, qs in subsets.items():
        ents = [e for q in qs for e in q.entity_types]
        rels = [r for q in qs for r in q.relationship_types]
        report.columns[name] = StatsColumn(
            total_queries=len(qs),
            avg_query_length=_mean([len(q.nl_text) for q in qs]),
            avg_entity_length=_mean([len(e) for e in ents]),
            avg_relationship_length=_mean([len(r) for r in rels]),
            unique_entity_types=len({_norm_type(e) for e in ents}),
            unique_relationship_types=len({_norm_type(r) for r in rels}),
            avg_judgments=_mean([judged[q.query_id] for q in qs]),
        )
    return report

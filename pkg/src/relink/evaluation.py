"""Tuple-level run evaluation: AP/MAP, P@k, Recall@k and NDCG@k.

Relevance is binary. A retrieved tuple is relevant when it matches a judged
tuple of the same query; each judged tuple can be credited once.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)


class RunFormatError(ValueError):
    pass


class MatchMode(enum.Enum):
    ORDERED = "ordered"
    UNORDERED = "unordered"


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    tuple: tuple[str, ...]
    rank: int
    score: float
    tag: str = "run"


def match_tuple(run_tuple: Sequence[str], qrel_tuple: Sequence[str],
                mode: MatchMode = MatchMode.ORDERED) -> bool:
    if len(run_tuple) != len(qrel_tuple):
        return False
    if mode is MatchMode.ORDERED:
        return tuple(run_tuple) == tuple(qrel_tuple)
    return sorted(run_tuple) == sorted(qrel_tuple)


def read_run(path: str | Path) -> list[RunEntry]:
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise RunFormatError(f"{path}: line {lineno}: expected 6 fields, got {len(parts)}")
            qid, _, tup, rank, score, tag = parts
            try:
                entries.append(RunEntry(qid, tuple(tup.split("|")), int(rank), float(score), tag))
            except ValueError:
                raise RunFormatError(f"{path}: line {lineno}: bad rank or score") from None
    return entries


def rank_run(entries: Iterable[RunEntry]) -> dict[str, list[tuple[str, ...]]]:
    """Group a run by query and re-derive ranks from scores.

    Order is score descending, then the run's own rank, then the tuple.
    """
    by_query: dict[str, list[RunEntry]] = defaultdict(list)
    for e in entries:
        by_query[e.query_id].append(e)
    ranked = {}
    for qid, es in by_query.items():
        seen = set()
        for e in es:
            if e.tuple in seen:
                raise RunFormatError(f"duplicate tuple {'|'.join(e.tuple)} in run for {qid}")
            seen.add(e.tuple)
        es.sort(key=lambda e: (-e.score, e.rank, e.tuple))
        ranked[qid] = [e.tuple for e in es]
    return ranked


def relevance_vector(ranking: Sequence[tuple[str, ...]], relevant: Iterable[Sequence[str]],
                     mode: MatchMode = MatchMode.ORDERED) -> list[int]:
    unclaimed = [tuple(t) for t in dict.fromkeys(tuple(t) for t in relevant)]
    rels = []
    for t in ranking:
        hit = next((i for i, q in enumerate(unclaimed) if match_tuple(t, q, mode)), None)
        if hit is None:
            rels.append(0)
        else:
            unclaimed.pop(hit)
            rels.append(1)
    return rels


def average_precision(rels: Sequence[int], n_relevant: int) -> float:
    if n_relevant == 0:
        return 0.0
    hits, total = 0, 0.0
    for i, r in enumerate(rels, start=1):
        if r:
            hits += 1
            total += hits / i
    return total / n_relevant


def precision_at(rels: Sequence[int], k: int) -> float:
    return sum(rels[:k]) / k


def recall_at(rels: Sequence[int], k: int, n_relevant: int) -> float:
    return sum(rels[:k]) / n_relevant if n_relevant else 0.0


def ndcg_at(rels: Sequence[int], k: int, n_relevant: int) -> float:
    dcg = sum(r / math.log2(i + 1) for i, r in enumerate(rels[:k], start=1))
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(n_relevant, k) + 1))
    return dcg / ideal if ideal else 0.0


@dataclass
class EvalResult:
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)
    unjudged_queries: list[str] = field(default_factory=list)
    metric_names: list[str] = field(default_factory=list)

    def to_tsv(self) -> str:
        """``metric<TAB>query_id<TAB>value`` rows, per query then ``all``."""
        lines = []
        for qid in sorted(self.per_query):
            for m in self.metric_names:
                lines.append(f"{m}\t{qid}\t{self.per_query[qid][m]:.6f}")
        for m in self.metric_names:
            lines.append(f"{m}\tall\t{self.means.get(m, 0.0):.6f}")
        return "\n".join(lines) + "\n"


def evaluate(run: Iterable[RunEntry] | Mapping[str, Sequence[tuple[str, ...]]],
             qrels: Iterable, k_values: Sequence[int] = (5, 10, 20),
             mode: MatchMode = MatchMode.ORDERED) -> EvalResult:
    """Evaluate ``run`` (entries or an already ranked ``{qid: [tuple, ...]}``).

    ``qrels`` is an iterable of objects with ``query_id`` and ``tuple``.
    Only queries present in the run are scored; run queries without
    judgments are reported in ``unjudged_queries`` and left out of the means.
    """
    ranked = dict(run) if isinstance(run, Mapping) else rank_run(run)
    judged: dict[str, list[tuple[str, ...]]] = defaultdict(list)
    for r in qrels:
        judged[r.query_id].append(tuple(r.tuple))
    names = ["map"] + [f"{m}@{k}" for m in ("P", "recall", "ndcg") for k in k_values]
    result = EvalResult(metric_names=names)
    for qid in sorted(ranked):
        relevant = list(dict.fromkeys(judged.get(qid, [])))
        if not relevant:
            result.unjudged_queries.append(qid)
            continue
        rels = relevance_vector(ranked[qid], relevant, mode)
        n = len(relevant)
        row = {"map": average_precision(rels, n)}
        for k in k_values:
            row[f"P@{k}"] = precision_at(rels, k)
        for k in k_values:
            row[f"recall@{k}"] = recall_at(rels, k, n)
        for k in k_values:
            row[f"ndcg@{k}"] = ndcg_at(rels, k, n)
        result.per_query[qid] = row
    if result.unjudged_queries:
        logger.warning("run queries without judgments: %s", ", ".join(result.unjudged_queries))
    if result.per_query:
        for m in names:
            result.means[m] = math.fsum(r[m] for r in result.per_query.values()) / len(result.per_query)
    return result

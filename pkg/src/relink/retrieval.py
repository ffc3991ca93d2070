"""Relational query answering over an :class:`~relink.erindex.ERIndex`.

A relational query alternates entity-type and relationship-type
sub-queries, e.g. ``{regiment, held by, Indian Army}``. Each entity
sub-query is run against the entity partition and each relationship
sub-query against the pair partition. Matching units are grouped by their
entity (or entity pair) key and every candidate group is scored over its
full profile. The per-slot rankings are then joined into entity tuples and
ordered by a weighted sum of the 2n-1 slot scores.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import normalize_terms
from .erindex import CollectionStats, ERIndex, GroupProfile, IndexPartition

UNIFORM = "uniform"


class QueryFormatError(ValueError):
    pass


class Model(enum.Enum):
    LM = "lm"
    SDM = "sdm"


class Orientation(enum.Enum):
    STRICT = "strict"
    EITHER = "either"


@dataclass(frozen=True)
class RelationalQuery:
    query_id: str
    nl_text: str
    entity_subqueries: tuple[tuple[str, ...], ...]
    relationship_subqueries: tuple[tuple[str, ...], ...]
    orientation_mode: Orientation = Orientation.EITHER

    @property
    def arity(self) -> int:
        return len(self.entity_subqueries)

    def slots(self) -> list[tuple[str, ...]]:
        """Sub-queries in component order: E1, R12, E2, ..., En."""
        out = [self.entity_subqueries[0]]
        for r, e in zip(self.relationship_subqueries, self.entity_subqueries[1:]):
            out += [r, e]
        return out


@dataclass
class ScoringConfig:
    model: Model = Model.LM
    mu: float = 2000.0
    sdm_weights: tuple[float, float, float] = (0.85, 0.10, 0.05)
    unordered_window: int = 8
    candidate_depth: int = 100
    rerank_weights: Sequence[float] | str = UNIFORM
    # pseudo collection count for terms (and bigrams) unseen in the collection
    epsilon: float = 0.5

    def __post_init__(self):
        self.model = Model(self.model.lower() if isinstance(self.model, str) else self.model)
        self.sdm_weights = tuple(float(w) for w in self.sdm_weights)
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if len(self.sdm_weights) != 3 or min(self.sdm_weights) < 0 \
                or abs(sum(self.sdm_weights) - 1.0) > 1e-9:
            raise ValueError("sdm_weights must be three non-negative numbers summing to 1")
        if self.unordered_window < 2:
            raise ValueError("unordered_window must be >= 2")
        if self.candidate_depth < 1:
            raise ValueError("candidate_depth must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not isinstance(self.rerank_weights, str):
            self.rerank_weights = tuple(float(w) for w in self.rerank_weights)
        elif self.rerank_weights != UNIFORM:
            raise ValueError(f"rerank_weights must be a vector or {UNIFORM!r}")

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "mu": self.mu,
            "sdm_weights": list(self.sdm_weights),
            "unordered_window": self.unordered_window,
            "candidate_depth": self.candidate_depth,
            "rerank_weights": self.rerank_weights if isinstance(self.rerank_weights, str)
            else list(self.rerank_weights),
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class SubqueryRanking:
    slot: str
    entries: tuple[tuple[tuple, float], ...]

    def as_dict(self) -> dict[tuple, float]:
        return dict(self.entries)


@dataclass(frozen=True)
class TupleResult:
    tuple: tuple[str, ...]
    features: tuple[float, ...]
    score: float


# -- queries ----------------------------------------------------------------

def parse_query(record: Mapping, stopwords: Iterable[str] = ()) -> RelationalQuery:
    """Map ``components`` positionally: odd positions are entity types,
    even positions relationship types."""
    try:
        qid = record["query_id"]
        components = list(record["components"])
    except (KeyError, TypeError):
        raise QueryFormatError("query record needs 'query_id' and 'components'") from None
    if len(components) % 2 == 0:
        raise QueryFormatError(f"{qid}: even component count ({len(components)})")
    if len(components) < 3:
        raise QueryFormatError(f"{qid}: need at least 3 components, got {len(components)}")
    terms = [tuple(normalize_terms(str(c), stopwords)) for c in components]
    for i, t in enumerate(terms):
        if not t:
            raise QueryFormatError(f"{qid}: component {i + 1} ({components[i]!r}) is empty "
                                   f"after normalization")
    mode = Orientation(record.get("orientation", Orientation.EITHER.value).lower())
    return RelationalQuery(qid, record.get("nl_text", ""), tuple(terms[0::2]),
                           tuple(terms[1::2]), mode)


# -- scoring ----------------------------------------------------------------

def _log_dirichlet(count: int, coll_count: float, total: int, length: int, mu: float,
                   epsilon: float) -> float:
    p_coll = (coll_count if coll_count > 0 else epsilon) / max(total, 1)
    return math.log((count + mu * p_coll) / (length + mu))


def score_group_lm(profile: GroupProfile, terms: Sequence[str], stats: CollectionStats,
                   mu: float = 2000.0, epsilon: float = 0.5) -> float:
    """Dirichlet-smoothed query log-likelihood of ``terms`` under the group."""
    if not terms:
        raise ValueError("empty sub-query")
    if mu <= 0:
        raise ValueError("mu must be > 0")
    return sum(_log_dirichlet(profile.term_freqs.get(q, 0), stats.term_collection_freq.get(q, 0),
                              stats.total_terms, profile.total_length, mu, epsilon)
               for q in terms)


def ordered_count(pa: Sequence[int], pb: Sequence[int]) -> int:
    """Occurrences of ``a`` immediately followed by ``b``."""
    following = set(pb)
    return sum(1 for p in pa if p + 1 in following)


def unordered_count(pa: Sequence[int], pb: Sequence[int], window: int, same: bool) -> int:
    """Position pairs of ``a`` and ``b`` fitting in ``window`` consecutive tokens.

    For a repeated term (``same``) each unordered pair of distinct positions
    is counted once.
    """
    if same:
        return sum(1 for i, x in enumerate(pa) for y in pa[i + 1:] if y - x < window)
    return sum(1 for x in pa for y in pb if abs(x - y) < window)


def _unordered_collection_count(partition: IndexPartition, a: str, b: str, window: int) -> int:
    cache = partition.__dict__.setdefault("_uw_cache", {})
    key = (a, b, window)
    if key not in cache:
        units = {p.unit_id for p in partition.lookup_postings(a)}
        units &= {p.unit_id for p in partition.lookup_postings(b)}
        cache[key] = sum(unordered_count(partition.positions(a, u), partition.positions(b, u),
                                         window, a == b) for u in units)
    return cache[key]


def score_group_sdm(partition: IndexPartition, profile: GroupProfile, terms: Sequence[str],
                    config: ScoringConfig) -> float:
    """Sequential dependence score: weighted unigram, ordered-bigram and
    unordered-window log-likelihoods. Windows never span two units."""
    lam_t, lam_o, lam_u = config.sdm_weights
    stats = partition.stats
    f_t = score_group_lm(profile, terms, stats, config.mu, config.epsilon)
    if len(terms) < 2:
        return f_t
    score = lam_t * f_t
    bigrams = list(zip(terms, terms[1:]))
    if lam_o:
        f_o = 0.0
        for a, b in bigrams:
            tf = sum(ordered_count(partition.positions(a, u), partition.positions(b, u))
                     for u in profile.unit_ids)
            cf = stats.bigram_collection_freq.get((a, b), 0)
            f_o += _log_dirichlet(tf, cf, stats.total_terms, profile.total_length,
                                  config.mu, config.epsilon)
        score += lam_o * f_o
    if lam_u:
        f_u = 0.0
        w = config.unordered_window
        for a, b in bigrams:
            tf = sum(unordered_count(partition.positions(a, u), partition.positions(b, u),
                                     w, a == b) for u in profile.unit_ids)
            cf = _unordered_collection_count(partition, a, b, w)
            f_u += _log_dirichlet(tf, cf, stats.total_terms, profile.total_length,
                                  config.mu, config.epsilon)
        score += lam_u * f_u
    return score


def score_group(partition: IndexPartition, key, terms: Sequence[str],
                config: ScoringConfig) -> float:
    profile = partition.group_profile(key)
    if config.model is Model.LM:
        return score_group_lm(profile, terms, partition.stats, config.mu, config.epsilon)
    return score_group_sdm(partition, profile, terms, config)


def retrieve_subquery(partition: IndexPartition, terms: Sequence[str], config: ScoringConfig,
                      slot: str = "") -> SubqueryRanking:
    """Candidate groups are those owning a unit that matches any query term."""
    candidates = set()
    for t in set(terms):
        for post in partition.lookup_postings(t):
            candidates.add(partition.group_of(post.unit_id))
    scored = [(key, score_group(partition, key, terms, config)) for key in candidates]
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return SubqueryRanking(slot, tuple(scored[:config.candidate_depth]))


# -- tuple assembly ---------------------------------------------------------

def resolve_weights(weights: Sequence[float] | str, n_features: int) -> tuple[float, ...]:
    if isinstance(weights, str):
        if weights != UNIFORM:
            raise ValueError(f"unknown weight spec {weights!r}")
        return (1.0 / n_features,) * n_features
    weights = tuple(float(w) for w in weights)
    if len(weights) != n_features:
        raise ValueError(f"expected {n_features} weights, got {len(weights)}")
    return weights


def _combine(features: Sequence[float], weights: Sequence[float]) -> float:
    return math.fsum(f * w for f, w in zip(features, weights))


def _sort_results(results: list[TupleResult]) -> list[TupleResult]:
    return sorted(results, key=lambda r: (-r.score, r.tuple))


def join_tuples(entity_rankings: Sequence[SubqueryRanking],
                relationship_rankings: Sequence[SubqueryRanking],
                query: RelationalQuery, config: ScoringConfig) -> list[TupleResult]:
    """Emit every tuple whose entities appear in their entity rankings and
    whose adjacent pairs appear in the matching relationship ranking.

    Under EITHER orientation a pair stored as (b, a) satisfies (a, b); if both
    orientations are ranked the higher score is used.
    """
    n = len(entity_rankings)
    if len(relationship_rankings) != n - 1:
        raise ValueError("need one relationship ranking between each entity ranking")
    weights = resolve_weights(config.rerank_weights, 2 * n - 1)
    either = query.orientation_mode is Orientation.EITHER
    ent = [{k[0]: s for k, s in r.entries} for r in entity_rankings]
    rel: list[dict[tuple[str, str], float]] = []
    adj: list[dict[str, set[str]]] = []
    for r in relationship_rankings:
        scores: dict[tuple[str, str], float] = {}
        links: dict[str, set[str]] = {}
        for (a, b), s in r.entries:
            scores[(a, b)] = max(s, scores.get((a, b), -math.inf))
            links.setdefault(a, set()).add(b)
            if either:
                scores[(b, a)] = max(s, scores.get((b, a), -math.inf))
                links.setdefault(b, set()).add(a)
        rel.append(scores)
        adj.append(links)

    results = []
    partial = [((e,), (s,)) for e, s in ent[0].items()]
    for i in range(n - 1):
        grown = []
        for tup, feats in partial:
            for nxt in adj[i].get(tup[-1], ()):
                if nxt in ent[i + 1]:
                    grown.append((tup + (nxt,), feats + (rel[i][(tup[-1], nxt)], ent[i + 1][nxt])))
        partial = grown
    for tup, feats in partial:
        results.append(TupleResult(tup, feats, _combine(feats, weights)))
    return _sort_results(results)


def rerank(tuples: Iterable[TupleResult], weights: Sequence[float] | str) -> list[TupleResult]:
    tuples = list(tuples)
    if not tuples:
        return []
    w = resolve_weights(weights, len(tuples[0].features))
    return _sort_results([TupleResult(t.tuple, t.features, _combine(t.features, w))
                          for t in tuples])


# -- engine -----------------------------------------------------------------

class SearchEngine:
    """Staged E-R search: per-slot retrieval, join, weighted combination."""

    def __init__(self, index: ERIndex, config: ScoringConfig | None = None):
        self.index = index
        self.config = config or ScoringConfig()

    def rank_subqueries(self, query: RelationalQuery):
        cfg = self.config
        ents = [retrieve_subquery(self.index.entity_partition, q, cfg, f"E{i + 1}")
                for i, q in enumerate(query.entity_subqueries)]
        rels = [retrieve_subquery(self.index.pair_partition, q, cfg, f"R{i + 1},{i + 2}")
                for i, q in enumerate(query.relationship_subqueries)]
        return ents, rels

    def search(self, query: RelationalQuery) -> list[TupleResult]:
        ents, rels = self.rank_subqueries(query)
        return join_tuples(ents, rels, query, self.config)

    def search_many(self, queries: Sequence[RelationalQuery],
                    threads: int = 1) -> dict[str, list[TupleResult]]:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(self.search, queries))
        else:
            results = [self.search(q) for q in queries]
        return {q.query_id: r for q, r in zip(queries, results)}


# -- output formats ---------------------------------------------------------

def format_run(results: Mapping[str, Sequence[TupleResult]], tag: str = "relink",
               depth: int | None = None) -> list[str]:
    """TREC-style lines ``qid Q0 e1|e2 rank score tag``; queries in given order."""
    lines = []
    for qid, tuples in results.items():
        for rank, t in enumerate(tuples[:depth], start=1):
            lines.append(f"{qid} Q0 {'|'.join(t.tuple)} {rank} {t.score!r} {tag}")
    return lines


def emit_features(tuples: Iterable[TupleResult], query_id: str,
                  qrels: Iterable[Sequence[str]] | None = None) -> list[str]:
    """LETOR lines ``label qid:Q 1:f1 ... k:fk # e1|e2``.

    ``qrels`` holds the relevant tuples of this query; without it every
    label is 0.
    """
    relevant = {tuple(t) for t in qrels} if qrels is not None else set()
    lines = []
    for t in tuples:
        label = 1 if t.tuple in relevant else 0
        feats = " ".join(f"{i}:{v!r}" for i, v in enumerate(t.features, start=1))
        lines.append(f"{label} qid:{query_id} {feats} # {'|'.join(t.tuple)}")
    return lines

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relink.erindex import CollectionStats, GroupProfile, build_index
from relink.extraction import ExtractionUnit, Kind
from relink.retrieval import (
    Model,
    Orientation,
    QueryFormatError,
    RelationalQuery,
    ScoringConfig,
    SearchEngine,
    SubqueryRanking,
    TupleResult,
    emit_features,
    format_run,
    join_tuples,
    ordered_count,
    parse_query,
    rerank,
    retrieve_subquery,
    score_group,
    score_group_lm,
    score_group_sdm,
    unordered_count,
)

from oracles import BruteScorer, exhaustive_join


def query(n=2, mode=Orientation.EITHER):
    return RelationalQuery("Q", "", tuple(("x",) for _ in range(n)),
                           tuple(("r",) for _ in range(n - 1)), mode)


def ranking(entries, slot=""):
    entries = sorted(entries.items(), key=lambda kv: (-kv[1], kv[0]))
    return SubqueryRanking(slot, tuple(entries))


def ents(d):
    return ranking({(k,): v for k, v in d.items()})


# -- parse_query ------------------------------------------------------------

def test_parse_pair_query():
    q = parse_query({"query_id": "RELink_P_164", "components": ["regiment", "held by", "Indian Army"]})
    assert q.entity_subqueries == (("regiment",), ("indian", "army"))
    assert q.relationship_subqueries == (("held", "by"),)
    assert q.orientation_mode is Orientation.EITHER


def test_parse_triple_query():
    q = parse_query({"query_id": "RELink_T_071",
                     "components": ["NHL season", "scored more than 50 goals in", "NHL player",
                                    "played for", "NHL team"]})
    assert len(q.entity_subqueries) == 3 and len(q.relationship_subqueries) == 2
    assert q.relationship_subqueries[0] == ("scored", "more", "than", "50", "goals", "in")


@pytest.mark.parametrize("components, msg", [
    (["a", "b", "c", "d"], "even component count"),
    (["a"], "at least 3"),
    (["a", "...", "c"], "empty after normalization"),
])
def test_parse_errors(components, msg):
    with pytest.raises(QueryFormatError, match=msg):
        parse_query({"query_id": "Q", "components": components})


# -- LM / SDM ---------------------------------------------------------------

def test_lm_closed_form():
    stats = CollectionStats(total_terms=1000, term_collection_freq={"q": 1})
    g = GroupProfile(("g",), (1,), {"other": 8}, 8)
    assert score_group_lm(g, ["q"], stats, mu=2000) == pytest.approx(math.log(2 / 2008), rel=1e-12)


def test_lm_single_group_collection_scores_zero():
    idx = build_index([ExtractionUnit.make(Kind.ENTITY, ("g",), ["q", "q", "q"], "d", 0)])
    p = idx.entity_partition
    assert score_group_lm(p.group_profile(("g",)), ["q"], p.stats, 2000) == pytest.approx(0.0, abs=1e-15)


def test_lm_unseen_term_uses_floor_and_empty_group_is_finite():
    stats = CollectionStats(total_terms=10, term_collection_freq={})
    g = GroupProfile(("g",), (1,), {}, 0)
    s = score_group_lm(g, ["zzz"], stats, mu=100, epsilon=0.5)
    assert s == pytest.approx(math.log(100 * 0.05 / 100))
    with pytest.raises(ValueError):
        score_group_lm(g, [], stats)


def test_window_counts_on_held_by():
    assert ordered_count((0,), (1,)) == 1
    assert unordered_count((0,), (1,), 8, same=False) == 1
    idx = build_index([ExtractionUnit.make(Kind.PAIR, ("a", "b"), ["held", "by"], "d", 0)])
    p = idx.pair_partition
    cfg = ScoringConfig(model="sdm")
    brute = BruteScorer([ExtractionUnit.make(Kind.PAIR, ("a", "b"), ["held", "by"], "d", 0)])
    assert score_group_sdm(p, p.group_profile(("a", "b")), ["held", "by"], cfg) == \
        pytest.approx(brute.sdm(("a", "b"), ["held", "by"]), rel=1e-12)


def test_unordered_window_boundary():
    # positions 0 and 7 fit in a width-8 window, 0 and 8 do not
    assert unordered_count((0,), (7,), 8, False) == 1
    assert unordered_count((0,), (8,), 8, False) == 0
    assert unordered_count((0, 3, 20), (0, 3, 20), 8, True) == 1


def test_sdm_single_term_equals_lm(toy_index):
    p = toy_index.entity_partition
    cfg = ScoringConfig(model="sdm")
    for key in list(p.groups)[:20]:
        g = p.group_profile(key)
        assert score_group_sdm(p, g, ["army"], cfg) == score_group_lm(g, ["army"], p.stats, cfg.mu)


def _vocab(units):
    return sorted({t for u in units for t in u.terms})


def test_scores_match_brute_force(toy_units, toy_index):
    rng = random.Random(11)
    for kind, part in ((Kind.ENTITY, toy_index.entity_partition),
                       (Kind.PAIR, toy_index.pair_partition)):
        units = [u for u in toy_units if u.kind is kind]
        vocab = _vocab(units) + ["unseen"]
        brute = BruteScorer(units)
        cfg_lm, cfg_sdm = ScoringConfig(), ScoringConfig(model="sdm")
        for _ in range(40):
            q = [rng.choice(vocab) for _ in range(rng.randint(1, 4))]
            for key in rng.sample(sorted(part.groups), 5):
                assert score_group(part, key, q, cfg_lm) == pytest.approx(brute.lm(key, q), rel=1e-9)
                assert score_group(part, key, q, cfg_sdm) == pytest.approx(brute.sdm(key, q), rel=1e-9)


def test_sdm_reduces_to_lm_with_unit_lambda(toy_index):
    p = toy_index.pair_partition
    lm = ScoringConfig()
    sdm = ScoringConfig(model="sdm", sdm_weights=(1, 0, 0))
    for key in p.groups:
        assert score_group(p, key, ["is", "located", "in"], sdm) == score_group(p, key, ["is", "located", "in"], lm)


@pytest.mark.parametrize("kw", [dict(mu=0), dict(sdm_weights=(0.5, 0.5, 0.5)),
                                dict(unordered_window=1), dict(candidate_depth=0),
                                dict(rerank_weights="bogus")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ScoringConfig(**kw)


# -- retrieve_subquery ------------------------------------------------------

def test_single_matching_group():
    idx = build_index([ExtractionUnit.make(Kind.ENTITY, ("g",), ["regiment", "x"], "d", 0),
                       ExtractionUnit.make(Kind.ENTITY, ("h",), ["other"], "d", 0)])
    r = retrieve_subquery(idx.entity_partition, ["regiment"], ScoringConfig())
    assert [k for k, _ in r.entries] == [("g",)]


def test_no_match_is_empty(toy_index):
    assert retrieve_subquery(toy_index.entity_partition, ["qwertyuiop"], ScoringConfig()).entries == ()


def test_top_n_equals_exhaustive(toy_units, toy_index):
    rng = random.Random(5)
    for kind, part in ((Kind.ENTITY, toy_index.entity_partition),
                       (Kind.PAIR, toy_index.pair_partition)):
        units = [u for u in toy_units if u.kind is kind]
        vocab = _vocab(units)
        brute = BruteScorer(units)
        for model in ("lm", "sdm"):
            cfg = ScoringConfig(model=model, candidate_depth=4)
            for _ in range(15):
                q = [rng.choice(vocab) for _ in range(rng.randint(1, 3))]
                got = retrieve_subquery(part, q, cfg).entries
                # candidates: groups whose units contain a query term
                cands = {tuple(u.key) for u in units if set(u.terms) & set(q)}
                score = brute.lm if model == "lm" else brute.sdm
                expect = sorted(((k, score(k, q)) for k in cands), key=lambda kv: (-kv[1], kv[0]))[:4]
                assert [k for k, _ in got] == [k for k, _ in expect]
                for (_, a), (_, b) in zip(got, expect):
                    assert a == pytest.approx(b, rel=1e-9)
                assert len(got) == min(4, len(cands))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["the", "in", "army", "plant", "won", "located", "is", "of"]),
                min_size=1, max_size=3), st.integers(1, 12))
def test_truncation_is_prefix(toy_index, q, k):
    p = toy_index.entity_partition
    a = retrieve_subquery(p, q, ScoringConfig(candidate_depth=k)).entries
    b = retrieve_subquery(p, q, ScoringConfig(candidate_depth=k + 1)).entries
    assert b[:len(a)] == a
    assert all(x[1] >= y[1] for x, y in zip(b, b[1:]))


# -- join / rerank ----------------------------------------------------------

def test_single_candidate_join():
    out = join_tuples([ents({"a": 1.0}), ents({"b": 0.2})], [ranking({("a", "b"): 0.5})],
                      query(), ScoringConfig())
    assert len(out) == 1
    assert out[0].tuple == ("a", "b") and out[0].features == (1.0, 0.5, 0.2)
    assert out[0].score == pytest.approx(1.7 / 3)


def test_orientation_semantics():
    args = ([ents({"a": 1.0}), ents({"b": 0.2})], [ranking({("b", "a"): 0.5})])
    assert join_tuples(*args, query(mode=Orientation.STRICT), ScoringConfig()) == []
    (t,) = join_tuples(*args, query(mode=Orientation.EITHER), ScoringConfig())
    assert t.tuple == ("a", "b")


def test_either_takes_best_orientation():
    (t,) = join_tuples([ents({"a": 1.0}), ents({"b": 0.2})],
                       [ranking({("b", "a"): 0.5, ("a", "b"): 0.1})], query(), ScoringConfig())
    assert t.features[1] == 0.5


def test_empty_join():
    assert join_tuples([ents({}), ents({"b": 1})], [ranking({})], query(), ScoringConfig()) == []


def _random_instance(rng, n, pool=8, size=6):
    names = [f"e{i}" for i in range(pool)]
    ent = [{e: round(rng.uniform(-10, 0), 3) for e in rng.sample(names, size)} for _ in range(n)]
    rel = [{tuple(rng.sample(names, 2)): round(rng.uniform(-10, 0), 3) for _ in range(20)}
           for _ in range(n - 1)]
    return ent, rel


@pytest.mark.parametrize("n", [2, 3])
def test_join_equals_exhaustive_enumeration(n):
    rng = random.Random(n)
    for trial in range(40):
        ent, rel = _random_instance(rng, n)
        mode = rng.choice(list(Orientation))
        weights = [rng.uniform(0, 1) for _ in range(2 * n - 1)]
        got = join_tuples([ents(e) for e in ent], [ranking(r) for r in rel],
                          query(n, mode), ScoringConfig(rerank_weights=weights))
        expect = exhaustive_join(ent, rel, mode is Orientation.EITHER, weights)
        assert [(t.tuple, t.features, t.score) for t in got] == expect


def test_rerank_uniform_is_identity():
    rng = random.Random(2)
    ent, rel = _random_instance(rng, 3)
    joined = join_tuples([ents(e) for e in ent], [ranking(r) for r in rel], query(3), ScoringConfig())
    assert rerank(joined, "uniform") == joined


def test_rerank_projection_and_arity():
    ts = [TupleResult(("a", "b"), (1.0, 9.0, 9.0), 0), TupleResult(("c", "d"), (2.0, 0.0, 0.0), 0)]
    out = rerank(ts, (1, 0, 0))
    assert [t.tuple for t in out] == [("c", "d"), ("a", "b")]
    assert [t.features for t in out] == [(2.0, 0.0, 0.0), (1.0, 9.0, 9.0)]
    with pytest.raises(ValueError):
        rerank(ts, (1, 0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 0), st.floats(-50, 0), st.floats(-50, 0)),
                min_size=1, max_size=8),
       st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
       st.integers(-4, 4))
def test_rerank_matches_sort_oracle_and_scale_invariance(feats, w, exp):
    ts = [TupleResult((f"a{i}", f"b{i}"), f, 0.0) for i, f in enumerate(feats)]
    out = rerank(ts, w)
    expect = sorted(ts, key=lambda t: (-math.fsum(x * y for x, y in zip(t.features, w)), t.tuple))
    assert [t.tuple for t in out] == [t.tuple for t in expect]
    scaled = rerank(ts, [x * 2.0 ** exp for x in w])  # exact scaling by powers of two
    assert [t.tuple for t in scaled] == [t.tuple for t in out]


def test_rerank_scale_invariance_arbitrary_factor():
    # tie-free scores; exact ties are only stable under power-of-two scaling
    rng = random.Random(9)
    ts = [TupleResult((f"t{i}",), tuple(rng.uniform(-20, 0) for _ in range(3)), 0.0)
          for i in range(30)]
    w = (0.5, 0.25, 0.25)
    base = [t.tuple for t in rerank(ts, w)]
    for c in (0.1, 3.7, 1e3):
        assert [t.tuple for t in rerank(ts, [c * x for x in w])] == base


def test_exact_ties_survive_power_of_two_scaling():
    ts = [TupleResult((f"t{i}",), (float(-(i % 3)), 0.0, 0.0), 0.0) for i in range(9)]
    base = [t.tuple for t in rerank(ts, (0.5, 0.25, 0.25))]
    assert [t.tuple for t in rerank(ts, (4.0, 2.0, 2.0))] == base


# -- engine and output formats ----------------------------------------------

def test_engine_answers_table_query(toy_index):
    q = parse_query({"query_id": "RELink_P_164", "components": ["regiment", "held by", "Indian Army"]})
    results = SearchEngine(toy_index).search(q)
    assert results
    assert ("e_rajput", "e_indian_army") in [r.tuple for r in results]
    assert all(len(r.features) == 3 and all(math.isfinite(f) for f in r.features) for r in results)


def test_search_many_threads_match_serial(toy_index, data_dir):
    import json

    qs = [parse_query(json.loads(line)) for line in (data_dir / "sample_queries.jsonl").open()]
    eng = SearchEngine(toy_index, ScoringConfig(model="sdm"))
    assert eng.search_many(qs, threads=4) == eng.search_many(qs)


def test_feature_lines():
    ts = [TupleResult(("a", "b"), (1.5, -2.0, 0.25), 0.1), TupleResult(("c", "d"), (0.0, 0.0, 0.0), 0.0)]
    lines = emit_features(ts, "Q1", qrels=[("a", "b")])
    assert lines[0] == "1 qid:Q1 1:1.5 2:-2.0 3:0.25 # a|b"
    assert lines[1].startswith("0 qid:Q1 ")
    assert all(line.startswith("0 ") for line in emit_features(ts, "Q1"))


def test_feature_count_for_triples(toy_index, data_dir):
    import json

    recs = [json.loads(line) for line in (data_dir / "sample_queries.jsonl").open()]
    eng = SearchEngine(toy_index, ScoringConfig(candidate_depth=50))
    for rec in recs:
        q = parse_query(rec)
        for line in emit_features(eng.search(q), q.query_id):
            body = line.split(" # ")[0].split()
            assert len(body) - 2 == 2 * q.arity - 1


def test_run_format():
    lines = format_run({"Q": [TupleResult(("a", "b"), (0.0,), -1.25)]}, tag="t")
    assert lines == ["Q Q0 a|b 1 -1.25 t"]

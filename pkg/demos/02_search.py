# Answering relational queries
#
# A query alternates entity-type and relationship-type components. Each is
# scored against its own partition, the candidate lists are joined on shared
# entities, and the features are combined with a weight vector.

# %%
from importlib import resources
from pathlib import Path

from relink import ScoringConfig, SearchEngine, build_index, extract_corpus, ingest_corpus
from relink.retrieval import parse_query

data = Path(resources.files("relink") / "data")
index = build_index(extract_corpus(ingest_corpus(data / "toy_corpus.jsonl")))

q = parse_query({"query_id": "RELink_P_164",
                 "components": ["regiment", "held by", "Indian Army"]})
print(q.slots())

# %%
# Per-slot candidate lists before the join.
engine = SearchEngine(index, ScoringConfig(candidate_depth=5))
ents, rels = engine.rank_subqueries(q)
for r in ents + rels:
    print(r.slot, [("|".join(k), round(s, 3)) for k, s in r.entries])

# %%
for t in engine.search(q)[:5]:
    print(t.tuple, round(t.score, 4), [round(f, 3) for f in t.features])

# %%
# SDM adds bigram and window evidence. With all weight on unigrams it
# reproduces the query likelihood scores exactly.
lm = SearchEngine(index).search(q)
sdm1 = SearchEngine(index, ScoringConfig(model="sdm", sdm_weights=(1, 0, 0))).search(q)
print(lm == sdm1)

sdm = SearchEngine(index, ScoringConfig(model="sdm")).search(q)
print([t.tuple for t in sdm[:3]])

# %%
# A three-entity query joins two relationship slots.
q3 = parse_query({"query_id": "RELink_T_006",
                  "components": ["car plant", "operated by", "car manufacturer",
                                 "located in", "city"]})
for t in SearchEngine(index).search(q3)[:3]:
    print(t.tuple, round(t.score, 4))

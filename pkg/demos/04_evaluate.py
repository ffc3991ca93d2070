# Scoring a run against judgments
#
# Runs and qrels are plain text. Relevance is binary and a judged tuple is
# credited once, so a duplicate hit at a lower rank earns nothing.

# %%
import json
from importlib import resources
from pathlib import Path

from relink import SearchEngine, build_index, extract_corpus, ingest_corpus
from relink.collection import read_qrels
from relink.evaluation import evaluate
from relink.retrieval import format_run, parse_query

data = Path(resources.files("relink") / "data")
index = build_index(extract_corpus(ingest_corpus(data / "toy_corpus.jsonl")))
queries = [parse_query(json.loads(line)) for line in (data / "sample_queries.jsonl").open()]
results = SearchEngine(index).search_many(queries)
print("\n".join(format_run(results, depth=2)[:6]))

# %%
qrels = read_qrels(data / "sample_qrels.txt")
ranked = {qid: [t.tuple for t in ts] for qid, ts in results.items()}
res = evaluate(ranked, qrels, k_values=(5, 10))
for qid, row in sorted(res.per_query.items()):
    print(qid, {m: round(v, 3) for m, v in row.items() if m in ("map", "P@5", "ndcg@10")})

# %%
print({m: round(v, 4) for m, v in res.means.items()})
print("no judgments:", res.unjudged_queries)

# Building a query collection from tables
#
# Each relational table has a key column. Pairing it with another linked
# column gives a query skeleton, and the linked rows become the judgments.
# Tables are sampled per topic area and near-duplicate titles are dropped.

# %%
from importlib import resources
from pathlib import Path

from relink.collection import (detect_key_column, eligible_columns, generate_judgments,
                               jaccard_title_similarity, load_tables, query_id_for,
                               stratified_sample)

tables = load_tables(Path(resources.files("relink") / "data" / "tables"))
for t in tables:
    key = detect_key_column(t)
    print(f"{t.table_id:14s} {t.topic_area:12s} key={t.columns[key].header if key is not None else None}")

# %%
# The two river lists are too similar to both be kept.
by_id = {t.table_id: t for t in tables}
print(jaccard_title_similarity(by_id["t_rivers"].page_title, by_id["t_rivers_dup"].page_title))

# %%
usable = [t for t in tables
          if (k := detect_key_column(t)) is not None and eligible_columns(t, k)]
picked = stratified_sample(usable, 6, max_similarity=0.7, seed=0)
print([t.table_id for t in picked])

# %%
for n, t in enumerate(picked, start=1):
    key = detect_key_column(t)
    res = generate_judgments(t, key, eligible_columns(t, key)[:1], query_id_for(2, n))
    print(res.query.query_id, res.query.components, len(res.qrels), "judgments,",
          res.skipped_rows, "rows skipped")

# Extraction units and the E-R index
#
# A corpus is a JSONL file of documents with entity links. Every sentence
# yields one ENTITY unit per linked entity (the sentence minus that entity's
# own words) and one PAIR unit per pair of entities (the words between them).
# Units sharing a key are grouped, and groups are what gets ranked.

# %%
import tempfile
from importlib import resources
from pathlib import Path

from relink import build_index, extract_corpus, ingest_corpus, load_index, save_index
from relink.extraction import Kind

corpus = Path(resources.files("relink") / "data" / "toy_corpus.jsonl")
docs = list(ingest_corpus(corpus))
print(len(docs), "documents")

# %%
# One sentence, up close.
units = list(extract_corpus(docs))
regiment = [u for u in units if u.doc_id == docs[0].doc_id and u.sent_index == 0]
for u in regiment:
    print(u.kind.value, "|".join(u.key), "->", " ".join(u.terms))

# %%
# Build, save and reload. The directory is checksummed file by file.
index = build_index(units)
out = Path(tempfile.mkdtemp()) / "toy_index"
save_index(index, out)
print(sorted(p.name for p in out.iterdir()))

reloaded = load_index(out)
print(reloaded.manifest["counts"])

# %%
# A group aggregates every unit with the same key.
part = reloaded.partition(Kind.PAIR)
key = max(part.groups, key=lambda k: len(part.groups[k].unit_ids))
g = part.group_profile(key)
print(key, len(g.unit_ids), "units,", g.total_length, "terms")
print(sorted(g.term_freqs.items(), key=lambda kv: -kv[1])[:8])

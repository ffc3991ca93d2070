"""Seeded synthetic corpora and tables for property tests and benchmarks."""

from __future__ import annotations

import random

from .collection import Cell, ColumnSpec, SourceTable
from .corpus import AnnotatedDocument, EntityAnnotation

WORDS = ("the a plant river built located in of by held regiment army played for team "
         "season scored goals album won with book wrote about city country lake flows "
         "through car made manufactured dated model born near capital").split()

TITLE_WORDS = ("list of lists rivers lakes mountains books albums players cities regiments "
               "cars plants theorems awards songs films the in by and people").split()


def random_sentence(rng: random.Random, entities: list[tuple[str, str]], max_entities: int = 4,
                    length: tuple[int, int] = (3, 14)):
    """Return ``(text, [(entity_id, char_begin, char_end)])`` for one sentence.

    Mentions never overlap; an entity may be mentioned more than once.
    """
    n_words = rng.randint(*length)
    slots: list[tuple[str, str | None]] = [(rng.choice(WORDS), None) for _ in range(n_words)]
    for _ in range(rng.randint(0, max_entities)):
        ent, surface = rng.choice(entities)
        slots.insert(rng.randint(0, len(slots)), (surface, ent))
    text, mentions = "", []
    for i, (word, ent) in enumerate(slots):
        if i:
            text += " "
        if ent is not None:
            mentions.append((ent, len(text), len(text) + len(word)))
        text += word
    return text + ".", mentions


def make_entities(rng: random.Random, n: int) -> list[tuple[str, str]]:
    ents = []
    for i in range(n):
        words = [rng.choice(WORDS).capitalize() for _ in range(rng.randint(1, 3))]
        ents.append((f"e{i}", " ".join(words) + f" X{i}"))
    return ents


def synthetic_document(rng: random.Random, doc_id: str, n_sentences: int,
                       entities: list[tuple[str, str]], max_entities: int = 4) -> AnnotatedDocument:
    text, anns = "", []
    for i in range(n_sentences):
        sent, mentions = random_sentence(rng, entities, max_entities)
        if i:
            text += " "
        base = len(text.encode("utf-8"))
        for ent, b, e in mentions:
            surface = sent[b:e]
            anns.append(EntityAnnotation(ent, base + len(sent[:b].encode("utf-8")),
                                         base + len(sent[:e].encode("utf-8")), surface))
        text += sent
    anns.sort(key=lambda a: (a.begin, -a.end, a.entity_id))
    return AnnotatedDocument(doc_id, text, tuple(anns))


def synthetic_corpus(n_sentences: int, seed: int = 0, sentences_per_doc: int = 10,
                     n_entities: int = 200, max_entities: int = 4) -> list[AnnotatedDocument]:
    rng = random.Random(seed)
    entities = make_entities(rng, n_entities)
    docs = []
    remaining = n_sentences
    while remaining > 0:
        k = min(sentences_per_doc, remaining)
        docs.append(synthetic_document(rng, f"doc{len(docs)}", k, entities, max_entities))
        remaining -= k
    return docs


def synthetic_tables(n: int, seed: int = 0, areas: int = 9) -> list[SourceTable]:
    """Tables with short titles drawn from a small vocabulary, so many
    titles are near-duplicates of each other."""
    rng = random.Random(seed)
    tables = []
    for i in range(n):
        title = " ".join(rng.choice(TITLE_WORDS) for _ in range(rng.randint(1, 5)))
        rows = [[Cell(f"Item {i}-{r}", f"e_{i}_{r}"), Cell(f"Other {r}", f"o_{r}")] for r in range(3)]
        tables.append(SourceTable(f"syn{i:04d}", title,
                                  [ColumnSpec("Item", 1.0), ColumnSpec("Other", 1.0)], rows,
                                  topic_area=f"area{rng.randrange(areas)}"))
    return tables

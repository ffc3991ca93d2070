"""Entity-relationship retrieval and test-collection toolkit."""

from .corpus import (AnnotatedDocument, EntityAnnotation, IngestConfig, Sentence,
                     annotations_in_sentence, ingest_corpus, normalize_terms, segment_sentences)
from .extraction import (EntityKey, ExtractionConfig, ExtractionUnit, Kind, PairKey,
                         extract_corpus, extract_document, extract_entity_units,
                         extract_pair_units)
from .erindex import ERIndex, IndexConfig, build_index, load_index, save_index
from .retrieval import (Model, Orientation, RelationalQuery, ScoringConfig, SearchEngine,
                        TupleResult, emit_features, join_tuples, parse_query, rerank,
                        retrieve_subquery, score_group_lm, score_group_sdm)
from .collection import (SourceTable, collection_stats, detect_key_column, generate_judgments,
                         jaccard_title_similarity, load_qc, stratified_sample)
from .evaluation import MatchMode, evaluate, match_tuple

__version__ = "0.1.0"

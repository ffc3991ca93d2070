"""``relink`` command line: extract, index, search, eval, gen-collection, stats.

Exit codes: 0 success, 1 validation failure, 2 usage or I/O error.
Settings resolve as command-line flag > ``--config`` JSON file > default,
and each command writes the resolved settings to ``effective_config.json``
in its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import collection as coll
from .corpus import CorpusError, IngestConfig, IngestReport, RecordError, ingest_corpus
from .erindex import ERIndexError, IndexConfig, build_index, load_index, save_index
from .evaluation import MatchMode, RunFormatError, evaluate, read_run
from .extraction import (DumpError, ExtractionConfig, ExtractionStats, Kind, extract_corpus,
                         read_dump, write_dump)
from .retrieval import (Orientation, QueryFormatError, ScoringConfig, SearchEngine,
                        emit_features, format_run, parse_query)

logger = logging.getLogger("relink")

DEFAULTS = {
    "on_error": "fail",
    "stopwords": None,
    "max_separation": None,
    "threads": 1,
    "model": "lm",
    "mu": 2000.0,
    "sdm_lambda": "0.85,0.10,0.05",
    "window": 8,
    "depth": 100,
    "weights": "uniform",
    "orientation": None,
    "run_depth": 1000,
    "tag": "relink",
    "features": False,
    "qrels": None,
    "k": "5,10,20",
    "mode": "ordered",
    "target": 600,
    "seed": 0,
    "max_similarity": 0.7,
    "min_linked": 0.8,
    "arity": 2,
}

# settings that change how a command runs but never what it writes
_EXECUTION_ONLY = {"threads"}


class ValidationFailure(Exception):
    pass


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    settings = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        settings.update({k: v for k, v in from_file.items() if k in settings})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def _write_effective(out_dir: Path, command: str, settings: dict, inputs: dict) -> None:
    payload = {"command": command, "inputs": inputs,
               "settings": {k: v for k, v in settings.items() if k not in _EXECUTION_ONLY}}
    logger.info("effective config: %s", json.dumps(payload, sort_keys=True))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _stopwords(path) -> frozenset[str]:
    if not path:
        return frozenset()
    return frozenset(w.strip().lower() for w in Path(path).read_text(encoding="utf-8").split())


def _extraction_config(s: dict) -> ExtractionConfig:
    sep = s["max_separation"]
    return ExtractionConfig(max_separation=float("inf") if sep is None else int(sep),
                            stopwords=_stopwords(s["stopwords"]))


def _extract(corpus: str, s: dict, stats: ExtractionStats):
    report = IngestReport()
    docs = ingest_corpus(corpus, IngestConfig(on_error=s["on_error"]), report)
    units = list(extract_corpus(docs, _extraction_config(s), stats))
    for err in report.errors:
        print(f"warning: skipped {err}", file=sys.stderr)
    return units


# -- commands ---------------------------------------------------------------

def cmd_extract(args) -> int:
    s = _resolve(args, ["on_error", "stopwords", "max_separation"])
    out = Path(args.out_dir)
    stats = ExtractionStats()
    units = _extract(args.corpus, s, stats)
    out.mkdir(parents=True, exist_ok=True)
    write_dump(units, out / "units.jsonl")
    summary = {"documents": stats.documents, "sentences": stats.sentences,
               "ENTITY": stats.entity_units, "PAIR": stats.pair_units,
               "straddling_annotations": stats.straddling_annotations}
    (out / "extraction_stats.json").write_text(json.dumps(summary, indent=2) + "\n",
                                               encoding="utf-8")
    _write_effective(out, "extract", s, {"corpus": args.corpus})
    print(f"ENTITY\t{stats.entity_units}")
    print(f"PAIR\t{stats.pair_units}")
    return 0


def cmd_index(args) -> int:
    s = _resolve(args, ["on_error", "stopwords", "max_separation", "threads"])
    if args.dump:
        units = list(read_dump(args.dump))
        source = {"dump": args.dump}
    else:
        units = _extract(args.corpus, s, ExtractionStats())
        source = {"corpus": args.corpus}
    stop = sorted(_stopwords(s["stopwords"]))
    t0 = time.perf_counter()
    index = build_index(units, IndexConfig(threads=int(s["threads"]),
                                           metadata={"stopwords": stop}))
    logger.info("indexed %d units in %.2fs", len(units), time.perf_counter() - t0)
    out = Path(args.index_dir)
    save_index(index, out)
    _write_effective(out, "index", s, source)
    counts = index.manifest["counts"]
    print(f"ENTITY\tunits={counts['entity']['units']}\tgroups={counts['entity']['groups']}")
    print(f"PAIR\tunits={counts['pair']['units']}\tgroups={counts['pair']['groups']}")
    return 0


def _parse_floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValidationFailure(f"bad {what}: {text!r}") from None


def cmd_search(args) -> int:
    keys = ["model", "mu", "sdm_lambda", "window", "depth", "weights", "orientation",
            "run_depth", "tag", "features", "qrels", "threads"]
    s = _resolve(args, keys)
    index = load_index(args.index_dir)
    weights = s["weights"] if s["weights"] == "uniform" else _parse_floats(s["weights"], "weights")
    try:
        config = ScoringConfig(model=s["model"], mu=float(s["mu"]),
                               sdm_weights=_parse_floats(s["sdm_lambda"], "lambda"),
                               unordered_window=int(s["window"]), candidate_depth=int(s["depth"]),
                               rerank_weights=weights)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None
    stop = index.manifest.get("config", {}).get("stopwords", [])
    queries = []
    with open(args.queries, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if s["orientation"]:
                    record["orientation"] = s["orientation"]
                q = parse_query(record, stop)
            except (json.JSONDecodeError, QueryFormatError, ValueError) as exc:
                raise ValidationFailure(f"{args.queries}: line {lineno}: {exc}") from None
            if not isinstance(weights, str) and len(weights) != 2 * q.arity - 1:
                raise ValidationFailure(f"{q.query_id}: {len(weights)} weights given, "
                                        f"query needs {2 * q.arity - 1}")
            queries.append(q)
    results = SearchEngine(index, config).search_many(queries, threads=int(s["threads"]))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_lines = format_run(results, tag=s["tag"], depth=int(s["run_depth"]))
    (out / "run.txt").write_text("".join(line + "\n" for line in run_lines), encoding="utf-8")
    if s["features"] or s["qrels"]:
        judged: dict[str, list] = {}
        if s["qrels"]:
            for r in coll.read_qrels(s["qrels"]):
                judged.setdefault(r.query_id, []).append(r.tuple)
        lines = []
        for q in queries:
            tuples = results[q.query_id][:int(s["run_depth"])]
            lines += emit_features(tuples, q.query_id,
                                   judged.get(q.query_id, []) if s["qrels"] else None)
        (out / "features.txt").write_text("".join(x + "\n" for x in lines), encoding="utf-8")
    _write_effective(out, "search", s, {"index_dir": args.index_dir, "queries": args.queries})
    print(f"{len(queries)} queries, {len(run_lines)} run lines -> {out / 'run.txt'}")
    return 0


def cmd_eval(args) -> int:
    s = _resolve(args, ["k", "mode"])
    try:
        ks = [int(k) for k in str(s["k"]).split(",")]
    except ValueError:
        raise ValidationFailure(f"bad --k: {s['k']!r}") from None
    if any(k < 1 for k in ks):
        raise ValidationFailure("k values must be >= 1")
    run = read_run(args.run)
    qrels = coll.read_qrels(args.qrels)
    run_q = {e.query_id for e in run}
    qrel_q = {r.query_id for r in qrels}
    if run_q - qrel_q:
        print("warning: run queries without qrels: " + " ".join(sorted(run_q - qrel_q)),
              file=sys.stderr)
    if qrel_q - run_q:
        print("warning: judged queries missing from run: " + " ".join(sorted(qrel_q - run_q)),
              file=sys.stderr)
    result = evaluate(run, qrels, ks, MatchMode(s["mode"]))
    tsv = result.to_tsv()
    sys.stdout.write(tsv)
    if args.out_dir:
        out = Path(args.out_dir)
        _write_effective(out, "eval", s, {"run": args.run, "qrels": args.qrels})
        (out / "metrics.tsv").write_text(tsv, encoding="utf-8")
    return 0


def cmd_gen_collection(args) -> int:
    s = _resolve(args, ["target", "seed", "max_similarity", "min_linked", "arity"])
    arity = int(s["arity"])
    if arity not in (2, 3):
        raise ValidationFailure("--arity must be 2 or 3")
    tables = coll.load_tables(args.tables_dir)
    eligible, rejected = [], {}
    for t in tables:
        key = coll.detect_key_column(t)
        if key is None:
            rejected[t.table_id] = "no key column"
            continue
        if t.columns[key].cells_linked_ratio < s["min_linked"]:
            rejected[t.table_id] = "key column not linked"
            continue
        others = coll.eligible_columns(t, key, s["min_linked"])
        if len(others) < arity - 1:
            rejected[t.table_id] = f"fewer than {arity - 1} linked non-key columns"
            continue
        eligible.append((t, key, others[:arity - 1]))
    by_table = {id(e[0]): e for e in eligible}
    sample = coll.stratified_sample([e[0] for e in eligible], int(s["target"]),
                                    float(s["max_similarity"]), int(s["seed"]))
    # query numbering follows admission order
    picked = [by_table[id(t)] for t in sample]

    queries, qrels, stubs, skipped = [], [], [], {}
    for n, (t, key, others) in enumerate(picked, start=1):
        res = coll.generate_judgments(t, key, others, coll.query_id_for(arity, n), s["min_linked"])
        queries.append(res.query)
        qrels += res.qrels
        skipped[res.query.query_id] = res.skipped_rows
        stubs.append(coll.annotation_stub(t, res.query))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    coll.write_queries(queries, out / "queries.jsonl")
    coll.write_qrels(qrels, out / "qrels.txt")
    with (out / "annotation_stubs.jsonl").open("w", encoding="utf-8") as fh:
        for stub in stubs:
            fh.write(json.dumps(stub, ensure_ascii=False) + "\n")
    report = {
        "tables": len(tables),
        "eligible": len(eligible),
        "target": int(s["target"]),
        "selected": [q.source_table for q in queries],
        "rejected": rejected,
        "skipped_rows": skipped,
        "per_topic_area": _count_areas([e[0] for e in picked]),
    }
    (out / "sampling_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    _write_effective(out, "gen-collection", s, {"tables_dir": args.tables_dir})
    if len(queries) < int(s["target"]):
        print(f"warning: only {len(queries)} of {s['target']} tables selected", file=sys.stderr)
    print(f"{len(queries)} queries, {len(qrels)} judgments -> {out}")
    return 0


def _count_areas(tables) -> dict:
    counts: dict[str, int] = {}
    for t in tables:
        counts[t.topic_area] = counts.get(t.topic_area, 0) + 1
    return dict(sorted(counts.items()))


def cmd_stats(args) -> int:
    queries, qrels = coll.load_qc(args.queries, args.qrels)
    tsv = coll.collection_stats(queries, qrels).to_tsv()
    sys.stdout.write(tsv)
    if args.out_dir:
        out = Path(args.out_dir)
        _write_effective(out, "stats", {}, {"queries": args.queries, "qrels": args.qrels})
        (out / "stats.tsv").write_text(tsv, encoding="utf-8")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relink", description="Entity-relationship retrieval toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of default settings")

    def ingest_flags(sp):
        sp.add_argument("--on-error", dest="on_error", choices=["fail", "skip"])
        sp.add_argument("--stopwords", help="whitespace-separated stopword file")
        sp.add_argument("--max-separation", dest="max_separation", type=int)

    sp = sub.add_parser("extract", help="extract entity and pair units from a corpus")
    sp.add_argument("corpus")
    sp.add_argument("--out-dir", required=True)
    ingest_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("index", help="build an E-R index")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus")
    src.add_argument("--dump", help="extraction dump (units.jsonl)")
    sp.add_argument("--index-dir", required=True)
    sp.add_argument("--threads", type=int)
    ingest_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_index)

    sp = sub.add_parser("search", help="answer relational queries")
    sp.add_argument("--index-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--model", choices=["lm", "sdm"])
    sp.add_argument("--mu", type=float)
    sp.add_argument("--lambda", dest="sdm_lambda", help="SDM weights T,O,U")
    sp.add_argument("--window", type=int, help="unordered window width")
    sp.add_argument("--depth", type=int, help="candidate groups per sub-query")
    sp.add_argument("--weights", help="'uniform' or comma-separated 2n-1 weights")
    sp.add_argument("--orientation", choices=[o.value for o in Orientation])
    sp.add_argument("--run-depth", dest="run_depth", type=int)
    sp.add_argument("--tag")
    sp.add_argument("--features", action="store_true", default=None)
    sp.add_argument("--qrels", help="label feature lines with these judgments")
    sp.add_argument("--threads", type=int)
    common(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("eval", help="evaluate a run against qrels")
    sp.add_argument("run")
    sp.add_argument("qrels")
    sp.add_argument("--k", help="comma-separated cutoffs")
    sp.add_argument("--mode", choices=[m.value for m in MatchMode])
    sp.add_argument("--out-dir")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-collection", help="generate queries and qrels from tables")
    sp.add_argument("tables_dir")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--target", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-similarity", dest="max_similarity", type=float)
    sp.add_argument("--min-linked", dest="min_linked", type=float)
    sp.add_argument("--arity", type=int, choices=[2, 3])
    common(sp)
    sp.set_defaults(func=cmd_gen_collection)

    sp = sub.add_parser("stats", help="query collection statistics")
    sp.add_argument("queries")
    sp.add_argument("qrels")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RecordError, DumpError, QueryFormatError, RunFormatError, ValidationFailure,
            coll.CollectionError, ERIndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

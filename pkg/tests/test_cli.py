import json
import math

import pytest

from relink.cli import main
from relink.collection import jaccard_title_similarity
from relink.retrieval import parse_query

from conftest import write_jsonl
from oracles import brute_search


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def toy_index_dir(tmp_path_factory, data_dir):
    d = tmp_path_factory.mktemp("idx")
    assert main(["index", "--corpus", str(data_dir / "toy_corpus.jsonl"), "--index-dir", str(d)]) == 0
    return d


# -- extract ----------------------------------------------------------------

def test_extract_counts(capsys, tmp_path, data_dir, toy_units):
    code, out, _ = run(capsys, "extract", data_dir / "toy_corpus.jsonl", "--out-dir", tmp_path)
    assert code == 0
    n_ent = sum(u.kind.value == "ENTITY" for u in toy_units)
    assert out.splitlines() == [f"ENTITY\t{n_ent}", f"PAIR\t{len(toy_units) - n_ent}"]
    stats = json.loads((tmp_path / "extraction_stats.json").read_text())
    assert stats["straddling_annotations"] >= 1
    assert (tmp_path / "effective_config.json").exists()


def test_extract_empty_corpus(capsys, tmp_path):
    (tmp_path / "c.jsonl").write_text("")
    code, out, _ = run(capsys, "extract", tmp_path / "c.jsonl", "--out-dir", tmp_path / "o")
    assert code == 0 and out.splitlines() == ["ENTITY\t0", "PAIR\t0"]


def test_extract_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "extract", tmp_path / "nope.jsonl", "--out-dir", tmp_path)
    assert code == 2 and "error" in err


def test_extract_bad_record(capsys, tmp_path):
    write_jsonl(tmp_path / "c.jsonl", [{"doc_id": "d", "text": "abc",
                                        "annotations": [{"entity": "e", "begin": 0, "end": 9,
                                                         "surface": "abc"}]}])
    code, _, err = run(capsys, "extract", tmp_path / "c.jsonl", "--out-dir", tmp_path / "o")
    assert code == 1 and "line 1" in err
    code, _, _ = run(capsys, "extract", tmp_path / "c.jsonl", "--out-dir", tmp_path / "o",
                     "--on-error", "skip")
    assert code == 0


# -- index ------------------------------------------------------------------

def test_index_is_reproducible_across_runs_and_threads(capsys, tmp_path, data_dir):
    corpus = data_dir / "toy_corpus.jsonl"
    assert run(capsys, "index", "--corpus", corpus, "--index-dir", tmp_path / "a")[0] == 0
    assert run(capsys, "index", "--corpus", corpus, "--index-dir", tmp_path / "b")[0] == 0
    assert run(capsys, "index", "--corpus", corpus, "--index-dir", tmp_path / "c",
               "--threads", 8)[0] == 0
    a = snapshot(tmp_path / "a")
    assert a == snapshot(tmp_path / "b") == snapshot(tmp_path / "c")
    assert "effective_config.json" in a


def test_index_from_dump_and_corrupt_dump(capsys, tmp_path, data_dir):
    run(capsys, "extract", data_dir / "toy_corpus.jsonl", "--out-dir", tmp_path / "x")
    dump = tmp_path / "x" / "units.jsonl"
    assert run(capsys, "index", "--dump", dump, "--index-dir", tmp_path / "i")[0] == 0
    lines = dump.read_text().splitlines()
    lines[4] = lines[4][:-5]
    dump.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "index", "--dump", dump, "--index-dir", tmp_path / "j")
    assert code == 1 and "line 5" in err


def test_index_needs_a_source(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["index", "--index-dir", str(tmp_path)])
    assert exc.value.code == 2


# -- search -----------------------------------------------------------------

def test_sdm_unit_lambda_run_equals_lm(capsys, tmp_path, toy_index_dir, data_dir):
    q = data_dir / "sample_queries.jsonl"
    run(capsys, "search", "--index-dir", toy_index_dir, "--queries", q, "--out-dir", tmp_path / "lm")
    run(capsys, "search", "--index-dir", toy_index_dir, "--queries", q, "--out-dir", tmp_path / "sdm",
        "--model", "sdm", "--lambda", "1,0,0")
    lm = (tmp_path / "lm" / "run.txt").read_bytes()
    assert lm and lm == (tmp_path / "sdm" / "run.txt").read_bytes()


def test_unknown_flag_is_usage_error(capsys, tmp_path, toy_index_dir, data_dir):
    with pytest.raises(SystemExit) as exc:
        main(["search", "--index-dir", str(toy_index_dir), "--queries",
              str(data_dir / "sample_queries.jsonl"), "--out-dir", str(tmp_path), "--bogus"])
    assert exc.value.code == 2


def test_top_tuple_matches_brute_force(capsys, tmp_path, toy_index_dir, toy_units):
    rec = {"query_id": "RELink_P_164", "components": ["regiment", "held by", "Indian Army"]}
    write_jsonl(tmp_path / "q.jsonl", [rec])
    code, _, _ = run(capsys, "search", "--index-dir", toy_index_dir, "--queries", tmp_path / "q.jsonl",
                     "--out-dir", tmp_path / "o")
    assert code == 0
    lines = (tmp_path / "o" / "run.txt").read_text().splitlines()
    expect = brute_search(toy_units, parse_query(rec))
    assert len(lines) == len(expect)
    for line, (tup, _, score) in zip(lines, expect):
        qid, q0, t, rank, s, tag = line.split()
        assert t == "|".join(tup)
        assert math.isclose(float(s), score, rel_tol=1e-9)


def test_bad_query_and_weights(capsys, tmp_path, toy_index_dir):
    write_jsonl(tmp_path / "q.jsonl", [{"query_id": "Q", "components": ["a", "b"]}])
    code, _, err = run(capsys, "search", "--index-dir", toy_index_dir, "--queries", tmp_path / "q.jsonl",
                       "--out-dir", tmp_path / "o")
    assert code == 1 and "line 1" in err
    write_jsonl(tmp_path / "q.jsonl", [{"query_id": "Q", "components": ["a", "b", "c"]}])
    code, _, err = run(capsys, "search", "--index-dir", toy_index_dir, "--queries", tmp_path / "q.jsonl",
                       "--out-dir", tmp_path / "o", "--weights", "1,1")
    assert code == 1 and "weights" in err


def test_config_file_precedence(capsys, tmp_path, toy_index_dir, data_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tag": "fromfile", "run_depth": 2}))
    q = data_dir / "sample_queries.jsonl"
    run(capsys, "search", "--index-dir", toy_index_dir, "--queries", q, "--out-dir", tmp_path / "o",
        "--config", cfg, "--run-depth", 1)
    eff = json.loads((tmp_path / "o" / "effective_config.json").read_text())["settings"]
    assert eff["tag"] == "fromfile" and eff["run_depth"] == 1
    assert "threads" not in eff
    lines = (tmp_path / "o" / "run.txt").read_text().splitlines()
    assert all(line.endswith(" fromfile") and line.split()[3] == "1" for line in lines)


def test_features_labelled_by_qrels(capsys, tmp_path, toy_index_dir, data_dir):
    code, _, _ = run(capsys, "search", "--index-dir", toy_index_dir,
                     "--queries", data_dir / "sample_queries.jsonl", "--out-dir", tmp_path,
                     "--qrels", data_dir / "sample_qrels.txt")
    assert code == 0
    feats = (tmp_path / "features.txt").read_text().splitlines()
    assert any(line.startswith("1 qid:RELink_P_164 ") for line in feats)


def test_corrupt_index_is_validation_failure(capsys, tmp_path, toy_index_dir, data_dir):
    import shutil

    d = tmp_path / "idx"
    shutil.copytree(toy_index_dir, d)
    f = d / "entity.postings"
    b = bytearray(f.read_bytes())
    b[10] ^= 0xFF
    f.write_bytes(bytes(b))
    code, _, err = run(capsys, "search", "--index-dir", d, "--queries",
                       data_dir / "sample_queries.jsonl", "--out-dir", tmp_path / "o")
    assert code == 1 and "checksum" in err.lower()


# -- eval -------------------------------------------------------------------

def test_eval_perfect_run(capsys, tmp_path):
    (tmp_path / "qrels.txt").write_text("Q 0 a|b 1\nQ 0 c|d 1\n")
    (tmp_path / "run.txt").write_text("Q Q0 a|b 1 2.0 t\nQ Q0 c|d 2 1.0 t\n")
    code, out, _ = run(capsys, "eval", tmp_path / "run.txt", tmp_path / "qrels.txt",
                       "--out-dir", tmp_path / "o")
    assert code == 0
    assert "map\tall\t1.000000" in out.splitlines()
    assert (tmp_path / "o" / "effective_config.json").exists()
    assert (tmp_path / "o" / "metrics.tsv").read_text() == out


def test_eval_query_mismatch_warns(capsys, tmp_path):
    (tmp_path / "qrels.txt").write_text("Q 0 a|b 1\nQ9 0 x|y 1\n")
    (tmp_path / "run.txt").write_text("Q Q0 a|b 1 2.0 t\nQ2 Q0 a|b 1 2.0 t\n")
    code, _, err = run(capsys, "eval", tmp_path / "run.txt", tmp_path / "qrels.txt")
    assert code == 0 and "Q2" in err and "Q9" in err


def test_eval_io_errors(capsys, tmp_path):
    (tmp_path / "run.txt").write_text("Q Q0 a|b 1 2.0 t\n")
    code, _, _ = run(capsys, "eval", tmp_path / "run.txt", tmp_path / "missing.txt")
    assert code == 2
    (tmp_path / "qrels.txt").write_text("Q 0 a|b 1\n")
    code, _, _ = run(capsys, "eval", tmp_path / "run.txt", tmp_path / "qrels.txt", "--k", "x")
    assert code == 1


# -- gen-collection and stats ----------------------------------------------

def test_gen_collection_target_five(capsys, tmp_path, data_dir):
    tables = data_dir / "tables"
    code, _, _ = run(capsys, "gen-collection", tables, "--out-dir", tmp_path / "a", "--target", 5)
    assert code == 0
    stubs = [json.loads(x) for x in (tmp_path / "a" / "annotation_stubs.jsonl").read_text().splitlines()]
    assert len(stubs) == 5
    titles = [s["page_title"] for s in stubs]
    assert all(jaccard_title_similarity(x, y) < 0.7
               for i, x in enumerate(titles) for y in titles[i + 1:])
    queries = [json.loads(x) for x in (tmp_path / "a" / "queries.jsonl").read_text().splitlines()]
    assert [q["query_id"] for q in queries] == [f"RELink_P_{i:03d}" for i in range(1, 6)]
    run(capsys, "gen-collection", tables, "--out-dir", tmp_path / "b", "--target", 5)
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_gen_collection_shortfall_and_triples(capsys, tmp_path, data_dir):
    code, out, err = run(capsys, "gen-collection", data_dir / "tables", "--out-dir", tmp_path,
                         "--target", 50)
    assert code == 0 and "warning" in err
    report = json.loads((tmp_path / "sampling_report.json").read_text())
    assert report["rejected"]["t_colours"] == "no key column"
    # near-duplicate river lists never both appear
    assert not {"t_rivers", "t_rivers_dup"} <= set(report["selected"])
    code, _, _ = run(capsys, "gen-collection", data_dir / "tables", "--out-dir", tmp_path / "t",
                     "--arity", 3, "--target", 3)
    assert code == 0
    qs = [json.loads(x) for x in (tmp_path / "t" / "queries.jsonl").read_text().splitlines()]
    assert qs and all(len(q["components"]) == 5 for q in qs)


def test_stats_on_sample(capsys, tmp_path, data_dir):
    code, out, _ = run(capsys, "stats", data_dir / "sample_queries.jsonl",
                       data_dir / "sample_qrels.txt", "--out-dir", tmp_path)
    assert code == 0
    rows = dict((line.split("\t")[0], line.split("\t")[1:]) for line in out.splitlines())
    assert rows["statistic"] == ["2-entity", "3-entity", "all"]
    assert (tmp_path / "effective_config.json").exists()
    assert (tmp_path / "stats.tsv").read_text() == out


def test_stats_empty_collection(capsys, tmp_path):
    (tmp_path / "q").write_text("")
    (tmp_path / "r").write_text("")
    code, out, _ = run(capsys, "stats", tmp_path / "q", tmp_path / "r")
    assert code == 0
    for line in out.splitlines()[1:]:
        assert all(float(v) == 0 for v in line.split("\t")[1:])


def test_stats_arity_mismatch(capsys, tmp_path):
    write_jsonl(tmp_path / "q", [{"query_id": "RELink_P_001", "nl_text": "x",
                                  "components": ["a", "b", "c"]}])
    (tmp_path / "r").write_text("RELink_P_001 0 a|b|c 1\n")
    code, _, err = run(capsys, "stats", tmp_path / "q", tmp_path / "r")
    assert code == 1 and "RELink_P_001" in err

import gzip
import hashlib
import json

import pytest

from ensemble_codesearch.corpus import (
    AugmentOptions,
    CorpusEntry,
    build_perspective_dataset,
    dataset_lines,
    ingest,
    make_pairs,
    original_pairs,
    read_dataset,
    split,
    write_corpus,
    write_dataset,
)
from ensemble_codesearch.errors import ContractError, IngestError
from ensemble_codesearch.synthetic import BUNDLED, generate_corpus
from ensemble_codesearch.benchmark import bundled_corpus_path


def write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


def entries(n):
    return [CorpusEntry(f"e{i:03d}", f"void f{i}() {{ g({i}); }}", f"query number {i}") for i in range(n)]


# ingest

def test_ingest_three_valid(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [{"id": str(i), "code": "x();", "docstring": f"q{i}"} for i in range(3)])
    corpus = ingest(p)
    assert len(corpus) == 3 and corpus.skipped == 0


def test_ingest_skips_empty_code(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [
        {"id": "a", "code": "x();", "docstring": "q"},
        {"id": "b", "code": "   ", "docstring": "q"},
    ])
    corpus = ingest(p)
    assert [e.id for e in corpus] == ["a"] and corpus.skipped == 1


def test_ingest_malformed_duplicate_and_missing_id(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [
        {"id": "a", "code": "x();", "docstring": "q", "extra": 1},
        "{not json",
        [1, 2],
        {"id": "a", "code": "y();", "docstring": "q2"},
        {"code": "z();", "docstring": "q3"},
    ])
    corpus = ingest(p)
    assert [e.id for e in corpus] == ["a", "line-5"]
    assert corpus.skipped == 2 and corpus.duplicates == 1


def test_ingest_gzip_and_query_field(tmp_path):
    p = tmp_path / "c.jsonl.gz"
    with gzip.open(p, "wt", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "a", "code": "x();", "query": "q"}) + "\n")
    assert ingest(p)[0].query == "q"


def test_ingest_nothing_valid(tmp_path):
    with pytest.raises(IngestError):
        ingest(write_lines(tmp_path / "c.jsonl", ["{}", "nope"]))


def test_write_then_ingest_round_trip(tmp_path):
    es = entries(5)
    write_corpus(es, tmp_path / "c.jsonl")
    assert ingest(tmp_path / "c.jsonl").entries == es


# make_pairs

def test_two_entries_swap_queries():
    a, b = entries(2)
    pairs = make_pairs([a, b], seed=0)
    assert len(pairs) == 4
    neg = {p.origin_id: p.query for p in pairs if p.label == 0}
    assert neg == {a.id: b.query, b.id: a.query}


def test_hundred_entries_balanced():
    pairs = make_pairs(entries(100), seed=1)
    assert len(pairs) == 200 and sum(p.label for p in pairs) == 100


def test_make_pairs_deterministic():
    digest = lambda seed: hashlib.sha256(repr(make_pairs(entries(50), seed)).encode()).hexdigest()
    assert digest(4) == digest(4)
    assert digest(4) != digest(5)


def test_make_pairs_needs_two():
    with pytest.raises(ContractError):
        make_pairs(entries(1), 0)


def test_negatives_never_use_own_query():
    for p in make_pairs(entries(30), 2):
        if p.label == 0:
            assert p.query != f"query number {int(p.origin_id[1:])}"


# build_perspective_dataset

def test_rename_case_structure_two_positives(rename_src):
    other = CorpusEntry("other", "void f() { return; }", "do nothing at all")
    ds = build_perspective_dataset([CorpusEntry("html", rename_src, "replace html entities"), other],
                                   "structure", seed=0)
    pos = [e for e in ds.examples if e.label == 1 and e.query == "replace html entities"]
    assert sorted(e.provenance for e in pos) == ["original", "renamed"]
    assert next(e for e in pos if e.provenance == "renamed").code.count("var0") > 0
    # the no-local entry contributes its original only
    assert [e.provenance for e in ds.examples if e.label == 1 and e.origin_id == "other"] == ["original"]
    assert ds.stats["status"] == {"ok": 1, "identity": 1, "untransformable": 0}


def test_permute_case_api_retained(permute_src):
    plain = CorpusEntry("plain", "int add(int a,int b){return a+b;}", "add two numbers")
    extra = CorpusEntry("io", "void f() { Thread.sleep(1); }", "pause")
    ds = build_perspective_dataset([CorpusEntry("crypto", permute_src, "encrypt"), plain, extra], "api", seed=0)
    assert {e.origin_id for e in ds.examples} == {"crypto", "io"}


def test_variable_perspective_adds_permuted(permute_src):
    other = CorpusEntry("o", "void f() { g(); }", "call g")
    ds = build_perspective_dataset([CorpusEntry("crypto", permute_src, "encrypt"), other], "variable", seed=0)
    provs = sorted(e.provenance for e in ds.examples if e.label == 1)
    assert provs == ["original", "original", "permuted"]
    assert ds.records[0]["kind"] == "permute"


def test_unparseable_entry_kept_untransformed():
    bad = CorpusEntry("bad", "void f( {", "broken")
    ds = build_perspective_dataset([bad, *entries(2)], "structure", seed=0)
    assert "bad" in ds.stats["untransformable"]
    assert [e.provenance for e in ds.examples if e.origin_id == "bad" and e.label == 1] == ["original"]


def test_unknown_perspective():
    with pytest.raises(ContractError):
        build_perspective_dataset(entries(3), "lexical", 0)


@pytest.fixture(scope="module")
def synthetic():
    return generate_corpus(20, seed=3)


@pytest.mark.parametrize("perspective", ["structure", "variable", "api"])
def test_dataset_invariants(synthetic, perspective):
    ds = build_perspective_dataset(synthetic, perspective, seed=9)
    pos = [e for e in ds.examples if e.label == 1]
    neg = [e for e in ds.examples if e.label == 0]
    assert len(pos) == len(neg)
    own_query = {e.id: e.query for e in synthetic}
    for e in neg:
        assert e.query != own_query[e.origin_id]
    for e in pos:
        assert e.query == own_query[e.origin_id]
    if perspective == "api":
        assert all(e.provenance == "original" for e in ds.examples)


def test_workers_do_not_change_output(synthetic):
    serial = dataset_lines(build_perspective_dataset(synthetic, "variable", 2))
    parallel = dataset_lines(build_perspective_dataset(synthetic, "variable", 2, workers=2))
    assert serial == parallel


def test_all_variants_option(permute_src):
    other = CorpusEntry("o", "void f() { g(); }", "call g")
    ds = build_perspective_dataset([CorpusEntry("crypto", permute_src, "encrypt"), other], "variable", 0,
                                   options=AugmentOptions(all_variants=True))
    assert sum(e.provenance == "permuted" and e.label == 1 for e in ds.examples) == 4


def test_dataset_file_round_trip_and_determinism(tmp_path, synthetic):
    ds = build_perspective_dataset(synthetic, "structure", 1)
    m1 = write_dataset(ds, tmp_path / "a.jsonl", {"catalog_sha256": "x"})
    write_dataset(build_perspective_dataset(synthetic, "structure", 1), tmp_path / "b.jsonl", {"catalog_sha256": "x"})
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert m1["sha256"] == hashlib.sha256((tmp_path / "a.jsonl").read_bytes()).hexdigest()
    back = read_dataset(tmp_path / "a.jsonl")
    assert back.examples == ds.examples and back.perspective == "structure" and back.generation_seed == 1
    record = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
    assert set(record) == {"id", "origin_id", "query", "code", "label", "provenance", "perspective"}


def test_original_pairs():
    ds = original_pairs(entries(4), 0)
    assert ds.perspective == "original" and len(ds.examples) == 8


# split

def test_split_sizes():
    parts = split(entries(10), (0.8, 0.1, 0.1), 0)
    assert [len(p) for p in parts] == [8, 1, 1]


def test_split_all_train():
    parts = split(entries(7), (1, 0, 0), 0)
    assert [len(p) for p in parts] == [7, 0, 0]


def test_split_partition_and_determinism():
    es = entries(23)
    a, b = split(es, (0.6, 0.2, 0.2), 4), split(es, (0.6, 0.2, 0.2), 4)
    assert [p.entries for p in a] == [p.entries for p in b]
    ids = sorted(e.id for p in a for e in p)
    assert ids == sorted(e.id for e in es)


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.5), (1.0, 0.0), (1.2, -0.1, -0.1)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ContractError):
        split(entries(5), ratios, 0)


# bundled data

@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_bundled_corpora_match_generator(tmp_path, name):
    write_corpus(generate_corpus(**BUNDLED[name]), tmp_path / name)
    assert (tmp_path / name).read_bytes() == bundled_corpus_path(name).read_bytes()

import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from translationese.corpus import (
    CorpusError,
    DatasetSpec,
    Label,
    PosTag,
    assemble_dataset,
    labels_of,
    load_corpus,
    write_corpus,
)
from translationese.synthetic import generate_corpus, mini_corpus_path


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_single_record(tmp_path):
    f = tmp_path / "one.jsonl"
    _write_lines(f, [{"id": "a", "language": "en", "label": "Original",
                      "tokens": ["Hello", "."], "pos_tags": ["Intj", "Punct"]}])
    (p,) = load_corpus(f)
    assert len(p.tokens) == 2
    assert p.pos_tags == (PosTag.INTJ, PosTag.PUNCT)
    assert p.label is Label.ORIGINAL and p.source_language is None


def test_length_mismatch_names_line(tmp_path):
    good = {"id": "a", "language": "en", "label": "original", "tokens": ["x"], "pos_tags": ["NOUN"]}
    bad = {"id": "b", "language": "en", "label": "original",
           "tokens": ["a", "b", "c"], "pos_tags": ["NOUN", "NOUN"]}
    f = tmp_path / "bad.jsonl"
    _write_lines(f, [good, bad])
    with pytest.raises(CorpusError, match="length mismatch at line 2"):
        load_corpus(f)


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"pos_tags": ["NOUNISH"]}, "unknown POS tag"),
        ({"label": "maybe"}, "unknown label"),
        ({"label": "translated"}, "source language"),
    ],
)
def test_invalid_records(tmp_path, patch, message):
    rec = {"id": "a", "language": "en", "label": "original", "tokens": ["x"], "pos_tags": ["NOUN"]}
    rec.update(patch)
    f = tmp_path / "bad.jsonl"
    _write_lines(f, [rec])
    with pytest.raises(CorpusError, match=message):
        load_corpus(f)


def test_malformed_json_names_line(tmp_path):
    f = tmp_path / "bad.jsonl"
    f.write_text('{"id": "a"}\n{nope\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="line 1"):
        load_corpus(f)
    f.write_text("{nope\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="malformed record at line 1"):
        load_corpus(f)


def test_bundled_corpus_round_trips_byte_identical(tmp_path):
    paragraphs = load_corpus(mini_corpus_path())
    assert len(paragraphs) == 2000
    out = tmp_path / "copy.jsonl"
    write_corpus(paragraphs, out)
    assert out.read_bytes() == mini_corpus_path().read_bytes()


def test_trg_src_counts():
    pool = generate_corpus({("de", None): 100, ("de", "en"): 100}, seed=3)
    spec = DatasetSpec.parse("trg-src:de:en", fractions=(0.72, 0.14, 0.14))
    b = assemble_dataset(pool, spec, seed=0)
    assert (len(b.train), len(b.dev), len(b.test)) == (144, 28, 28)
    for split in b.splits().values():
        assert labels_of(split).sum() * 2 == len(split)


def test_all_all_six_equal_cells(tri_corpus):
    b = assemble_dataset(tri_corpus, DatasetSpec.parse("all-all:de,en,es"), seed=4)
    for split in b.splits().values():
        cells = Counter(p.cell for p in split if p.is_translated)
        assert set(cells) == {("de", "en"), ("de", "es"), ("en", "de"), ("en", "es"), ("es", "de"), ("es", "en")}
        assert len(set(cells.values())) == 1
        originals = Counter(p.language for p in split if not p.is_translated)
        assert len(set(originals.values())) == 1
        assert sum(originals.values()) == sum(cells.values())


def test_missing_cell_is_named(tri_corpus):
    pool = [p for p in tri_corpus if p.cell != ("es", "de")]
    with pytest.raises(CorpusError, match=r"\(es, de\)"):
        assemble_dataset(pool, DatasetSpec.parse("all-all:de,en,es"), seed=0)


@pytest.mark.parametrize("text", ["trg-src:de", "trg-src:de,en:en", "bogus:de:en", "trg-all:de,en:es"])
def test_bad_specs(text):
    with pytest.raises(CorpusError):
        DatasetSpec.parse(text)


def test_bad_fractions():
    with pytest.raises(CorpusError):
        DatasetSpec.parse("trg-src:de:en", fractions=(0.5, 0.5, 0.5))


def test_spec_string_round_trip():
    for text in ("trg-src:de:en", "trg-all:de:en,es", "all-all:de,en,es"):
        spec = DatasetSpec.parse(text)
        assert str(spec) == text
        assert DatasetSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    spec=st.sampled_from(["trg-src:de:en", "trg-src:es:de", "trg-all:en:de,es", "all-all:de,en,es"]),
)
def test_balance_determinism_disjointness(tri_corpus, seed, spec):
    spec = DatasetSpec.parse(spec)
    a = assemble_dataset(tri_corpus, spec, seed)
    b = assemble_dataset(tri_corpus, spec, seed)
    assert a == b
    ids = [set(p.id for p in split) for split in a.splits().values()]
    for split, idset in zip(a.splits().values(), ids):
        assert len(idset) == len(split)
        y = labels_of(split)
        assert 2 * int(y.sum()) == len(y)
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])

from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from translationese.subword import (
    EOW,
    PAD_ID,
    UNK_ID,
    SubwordError,
    dumps_vocab,
    load_vocab,
    loads_vocab,
    save_vocab,
    train_subword,
)


def naive_bpe(corpus, target_size):
    """Recount every pair from scratch before each merge."""
    freq = Counter(t for toks in corpus for t in toks)
    words = {w: list(w) + [EOW] for w in freq}
    units = {"<pad>", "<unk>", EOW} | {ch for w in freq for ch in w}
    merges = []
    while len(units) < target_size:
        pairs = Counter()
        for w, sym in words.items():
            for a, b in zip(sym, sym[1:]):
                pairs[(a, b)] += freq[w]
        if not pairs:
            break
        top = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        units.add(pair[0] + pair[1])
        for w, sym in words.items():
            out, k = [], 0
            while k < len(sym):
                if k + 1 < len(sym) and (sym[k], sym[k + 1]) == pair:
                    out.append(sym[k] + sym[k + 1])
                    k += 2
                else:
                    out.append(sym[k])
                    k += 1
            words[w] = out
    return merges


def test_first_merge_by_frequency():
    v = train_subword([["aaab", "aaab"]], 8)
    assert v.merges[0] == ("a", "a")


def test_zero_merges_at_boundary():
    corpus = [["abc", "cab"]]
    base = 4  # a, b, c and the end-of-word marker
    v = train_subword(corpus, base + 2)
    assert v.merges == []
    assert v.size == base + 2
    with pytest.raises(SubwordError):
        train_subword(corpus, base + 1)


def test_empty_corpus():
    with pytest.raises(SubwordError):
        train_subword([], 100)
    with pytest.raises(SubwordError):
        train_subword([[]], 100)


def test_reserved_ids_and_dense_range(mini):
    v = train_subword([p.tokens for p in mini[:200]], 500)
    assert v.vocab["<pad>"] == PAD_ID == 0 and v.vocab["<unk>"] == UNK_ID == 1
    assert sorted(v.vocab.values()) == list(range(v.size))
    assert v.size == 500


def test_matches_naive_oracle(mini):
    corpus = [p.tokens for p in mini[:150]]
    v = train_subword(corpus, 400)
    assert v.merges == naive_bpe(corpus, 400)


def test_deterministic(mini):
    corpus = [p.tokens for p in mini[:100]]
    assert train_subword(corpus, 300).merges == train_subword(corpus, 300).merges


def test_whole_unit_is_single_id():
    v = train_subword([["hallo"] * 5 + ["welt"]], 40)
    ids = v.encode(["hallo"])
    assert len(ids) == 1 and v.unit(ids[0]) == "hallo" + EOW


def test_unseen_character_is_unk():
    v = train_subword([["abc"]], 10)
    ids = v.encode(["aqc"])
    assert UNK_ID in ids
    assert all(i != UNK_ID for i in v.encode(["cab"]))


def test_round_trip_on_training_text(mini):
    corpus = [p.tokens for p in mini[:300]]
    v = train_subword(corpus, 800)
    for toks in corpus[:100]:
        ids = v.encode(toks)
        assert len(ids) >= len(toks)
        assert v.decode(ids) == list(toks)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text(alphabet="abcdeé", min_size=1, max_size=8), min_size=1, max_size=12))
def test_every_token_gets_at_least_one_unit(tokens):
    v = train_subword([tokens], 30)
    for t in tokens:
        assert len(v.encode([t])) >= 1
    assert v.decode(v.encode(tokens)) == tokens


def test_file_round_trip(tmp_path, mini):
    v = train_subword([p.tokens for p in mini[:100]], 300)
    save_vocab(v, tmp_path / "v.txt")
    again = load_vocab(tmp_path / "v.txt")
    assert again == v
    assert dumps_vocab(again) == dumps_vocab(v)
    assert loads_vocab(dumps_vocab(v)).encode(["bä", "und"]) == v.encode(["bä", "und"])

import math
from collections import Counter, defaultdict

import numpy as np
import pytest

from translationese.ngram_lm import (
    BOS,
    EOS,
    UNK,
    Direction,
    NgramModel,
    ScoreReport,
    Stream,
    dumps_model,
    good_turing_discounts,
    load_model,
    loads_model,
    save_model,
    train_ngram,
)


def _cond_sum(model, context):
    return sum(10.0 ** model.cond_log10(context, w) for w in model.predictable)


@pytest.fixture(scope="module")
def token_seqs(mini):
    return [p.tokens for p in mini[:500]]


@pytest.fixture(scope="module")
def tag_seqs(mini):
    return [[t.value for t in p.pos_tags] for p in mini[:500]]


def test_trivial_unigram_normalizes():
    m = train_ngram([["a", "a", "a"]], 1)
    assert set(m.predictable) == {"a", EOS, UNK}
    assert abs(_cond_sum(m, ()) - 1.0) < 1e-6


def test_trigram_contexts_normalize(token_seqs):
    m = train_ngram(token_seqs, 3)
    rng = np.random.default_rng(0)
    for m_order in (1, 2, 3):
        contexts = m.contexts(m_order)
        picks = rng.choice(len(contexts), size=min(40, len(contexts)), replace=False)
        for i in picks:
            assert abs(_cond_sum(m, contexts[i]) - 1.0) < 1e-6
    # unseen contexts back off all the way and still normalize
    assert abs(_cond_sum(m, ("never", "seen")) - 1.0) < 1e-6


def test_all_probabilities_at_most_one(tag_seqs):
    m = train_ngram(tag_seqs, 4, stream=Stream.POS)
    for table in m.log10_probs:
        assert max(table.values()) <= 0.0


def test_reversal_symmetry_map_for_map():
    back = train_ngram([["x", "y"]], 2, Direction.BACKWARD)
    fwd = train_ngram([["y", "x"]], 2, Direction.FORWARD)
    assert back.same_tables(fwd)


def test_reversal_symmetry_scores(token_seqs):
    back = train_ngram(token_seqs, 3, Direction.BACKWARD)
    fwd = train_ngram([list(reversed(s)) for s in token_seqs], 3, Direction.FORWARD)
    assert back.same_tables(fwd)
    para = token_seqs[7]
    assert back.score(para) == fwd.score(list(reversed(para)))


def test_ppl_definition():
    r = ScoreReport(-2.0, -1.0, 1)
    assert r.ppl == 10.0
    assert r.ppl_no_eos == 10.0


def test_uniform_unigram_hand_computation():
    vocab = {"a", "b", "c", BOS, EOS}
    probs = [{(w,): math.log10(0.25) for w in ("a", "b", "c", EOS)}]
    m = NgramModel(1, Direction.FORWARD, Stream.TOKEN, vocab, probs, [{}])
    r = m.score(["a", "b", "c"])
    assert r.log10_prob_with_eos == pytest.approx(4 * math.log10(0.25), abs=1e-12)
    assert r.log10_prob_no_eos == pytest.approx(3 * math.log10(0.25), abs=1e-12)
    assert r.ppl == pytest.approx(4.0, rel=1e-12)


def test_score_relations_and_oov(token_seqs):
    m = train_ngram(token_seqs, 3)
    for para in token_seqs[:20] + [["zzz-unseen", "qqq-unseen"]]:
        r = m.score(para)
        assert r.n_tokens == len(para)
        assert r.ppl == 10.0 ** (-r.log10_prob_with_eos / (r.n_tokens + 1))
        assert r.ppl_no_eos == 10.0 ** (-r.log10_prob_no_eos / r.n_tokens)
        assert r.ppl > 0 and r.log10_prob_with_eos < r.log10_prob_no_eos


def test_singletons_become_unk():
    m = train_ngram([["a", "a", "b"]], 1)
    assert "b" not in m.vocabulary and UNK in m.vocabulary
    assert m.score(["b"]) == m.score(["never-seen"])


def test_pos_models_have_closed_vocabulary(tag_seqs):
    m = train_ngram(tag_seqs, 2, stream=Stream.POS)
    assert UNK not in m.vocabulary
    with pytest.raises(KeyError):
        m.score(["NOT-A-TAG"])


def test_errors():
    with pytest.raises(ValueError):
        train_ngram([], 2)
    with pytest.raises(ValueError):
        train_ngram([[]], 2)
    with pytest.raises(ValueError):
        train_ngram([["a"]], 6)
    m = train_ngram([["a", "a"]], 1)
    with pytest.raises(ValueError):
        m.score([])


def test_good_turing_matches_katz_formula():
    coc = Counter({1: 100, 2: 40, 3: 20, 4: 12, 5: 8, 6: 5})
    common = 6 * 5 / 100
    d = good_turing_discounts(coc, 5)
    for r in range(1, 6):
        expected = ((r + 1) * coc[r + 1] / (r * coc[r]) - common) / (1 - common)
        assert d[r] == pytest.approx(expected, rel=1e-14)


def test_determinism_and_round_trip(tmp_path, token_seqs):
    a = train_ngram(token_seqs, 4, Direction.BACKWARD)
    b = train_ngram(token_seqs, 4, Direction.BACKWARD)
    assert a == b and dumps_model(a) == dumps_model(b)
    save_model(a, tmp_path / "m.arpa")
    c = load_model(tmp_path / "m.arpa")
    assert c == a
    assert dumps_model(c) == dumps_model(a)


def test_round_trip_escapes_awkward_symbols():
    seqs = [["a b", "tab\there", "back\\slash", "a b"]] * 2
    m = train_ngram(seqs, 2)
    assert loads_model(dumps_model(m)) == m


def _katz_bigram_oracle(seqs, vocab, k=5):
    """Textbook Katz bigram model computed straight from counts."""
    uni, bi = Counter(), Counter()
    for s in seqs:
        s = [w if w in vocab else UNK for w in s]
        padded = [BOS] + s + [EOS]
        for i in range(1, len(padded)):
            uni[padded[i]] += 1
            bi[(padded[i - 1], padded[i])] += 1

    def discounts(counter):
        coc = Counter(counter.values())
        n1 = coc[1]
        common = (k + 1) * coc[k + 1] / n1 if n1 else 1.0
        out = {r: 1.0 for r in range(1, k + 1)}
        if common >= 1.0:
            return lambda c: 1.0
        for r in range(1, k + 1):
            if coc[r]:
                d = ((r + 1) * coc[r + 1] / (r * coc[r]) - common) / (1 - common)
                out[r] = d if 0 < d <= 1 else 1.0
        return lambda c: out[c] if c <= k else 1.0

    predictable = sorted(vocab - {BOS})
    du, db = discounts(uni), discounts(bi)
    total = sum(uni.values())
    p_uni = {w: du(uni[w]) * uni[w] / total for w in predictable if uni[w]}
    unseen = [w for w in predictable if w not in p_uni]
    left = 1.0 - sum(p_uni.values())
    for w in unseen:
        p_uni[w] = left / len(unseen)

    follow = defaultdict(dict)
    for (h, w), c in bi.items():
        follow[h][w] = c
    table = {}
    for h, ws in follow.items():
        ch = sum(ws.values())
        seen = {w: db(c) * c / ch for w, c in ws.items()}
        if 1 - sum(seen.values()) < 1e-12:
            # nothing discounted: reserve one pseudo-count for the unseen words
            seen = {w: c / (ch + 1) for w, c in ws.items()}
        alpha = (1 - sum(seen.values())) / (1 - sum(p_uni[w] for w in seen))
        for w in predictable:
            table[(h, w)] = seen[w] if w in seen else alpha * p_uni[w]
    return p_uni, table


def test_bigram_matches_independent_katz_oracle(token_seqs):
    m = train_ngram(token_seqs, 2)
    p_uni, table = _katz_bigram_oracle(token_seqs, set(m.vocabulary))
    for w, p in p_uni.items():
        assert 10.0 ** m.cond_log10((), w) == pytest.approx(p, rel=1e-10)
    for (h, w), p in table.items():
        assert 10.0 ** m.cond_log10((h,), w) == pytest.approx(p, rel=1e-10)


def _avg_fit(seqs, order, direction, stream):
    m = train_ngram(seqs, order, direction, stream)
    return sum(m.score(s).log10_prob_with_eos for s in seqs) / len(seqs)


@pytest.mark.parametrize("direction", list(Direction))
def test_monotone_fit_pos_stream(tag_seqs, direction):
    fits = [_avg_fit(tag_seqs, n, direction, Stream.POS) for n in range(1, 6)]
    for lo, hi in zip(fits, fits[1:]):
        assert hi >= lo - 1e-9


@pytest.mark.xfail(
    strict=True,
    reason="Good-Turing discounting of the sparse singleton-heavy 4-gram token "
    "counts lowers the training-data fit below the trigram model",
)
def test_monotone_fit_token_stream(token_seqs):
    fits = [_avg_fit(token_seqs, n, Direction.FORWARD, Stream.TOKEN) for n in range(1, 6)]
    for lo, hi in zip(fits, fits[1:]):
        assert hi >= lo - 1e-9

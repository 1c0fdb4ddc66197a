"""The 108-dimensional hand-crafted feature vector and trigram baselines.

Feature order (IDs):

* 0-4: average word length, syllable ratio, paragraph length, lexical
  density, type-token ratio
* 5-22: POS tag ratios in :data:`translationese.corpus.POS_TAGS` order
* 23-82: for token then POS stream, forward then backward, n = 1..5:
  (log10 prob, perplexity, perplexity without EOS)
* 83-107: for n = 1..5: % of paragraph n-grams in training-frequency
  quartiles 1-4, then % OOV
"""

from __future__ import annotations

import enum
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import POS_TAGS, Paragraph, PosTag
from .ngram_lm import Direction, NgramModel, Stream, load_model, save_model, train_ngram

N_FEATURES = 108
LM_ORDERS = (1, 2, 3, 4, 5)
CONTENT_TAGS = frozenset({PosTag.NOUN, PosTag.PROPN, PosTag.VERB, PosTag.ADJ, PosTag.ADV})
DEFAULT_VOWELS = "aeiouyáàâäãåéèêëíìîïóòôöõúùûüýÿæœøı"

LM_KEYS: tuple[tuple[Stream, Direction, int], ...] = tuple(
    (s, d, n)
    for s in (Stream.TOKEN, Stream.POS)
    for d in (Direction.FORWARD, Direction.BACKWARD)
    for n in LM_ORDERS
)


def feature_names() -> list[str]:
    names = [
        "Average word length",
        "Syllable ratio",
        "Paragraph length",
        "Lexical density",
        "Type-token ratio",
    ]
    names += [f"POS Tag Ratio {t.value.capitalize()}" for t in POS_TAGS]
    for s, d, n in LM_KEYS:
        base = f"LM_{s.value} {d.value} n={n}"
        names += [f"{base} Log Prob", f"{base} Ppl", f"{base} Ppl-EOS"]
    ordinal = {1: "unigrams", 2: "bigrams", 3: "trigrams", 4: "4-grams", 5: "5-grams"}
    for n in LM_ORDERS:
        names += [f"% {ordinal[n]} from freq. quartile {q}" for q in range(1, 5)]
        names.append(f"% OOV {ordinal[n]}")
    return names


FEATURE_NAMES = feature_names()
assert len(FEATURE_NAMES) == N_FEATURES


def count_syllables(token: str, vowels: str = DEFAULT_VOWELS) -> int:
    """Number of maximal vowel runs; at least 1 for tokens with a letter, else 0."""
    if not any(ch.isalpha() for ch in token):
        return 0
    runs = 0
    prev = False
    for ch in token.lower():
        cur = ch in vowels
        if cur and not prev:
            runs += 1
        prev = cur
    return max(runs, 1)


def ngrams(seq: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def quartile_table(sequences: Iterable[Sequence[str]], n: int) -> dict[tuple[str, ...], int]:
    """Map each training n-gram type to its frequency quartile (1 = most frequent).

    Types are ranked by descending count with lexicographic tie-break and
    cut into four bins whose sizes differ by at most one.
    """
    counts: Counter = Counter()
    for seq in sequences:
        counts.update(ngrams(seq, n))
    ranked = sorted(counts, key=lambda g: (-counts[g], g))
    table = {}
    for q, chunk in enumerate(np.array_split(np.arange(len(ranked)), 4), start=1):
        for i in chunk:
            table[ranked[i]] = q
    return table


@dataclass
class FeatureContext:
    lms: dict[tuple[Stream, Direction, int], NgramModel]
    quartile_tables: dict[int, dict[tuple[str, ...], int]]
    scaler: np.ndarray
    vowels: str = DEFAULT_VOWELS
    logprob_includes_eos: bool = True
    meta: dict = field(default_factory=dict)


def _tags(p: Paragraph) -> list[str]:
    return [t.value for t in p.pos_tags]


def raw_features(p: Paragraph, ctx: FeatureContext) -> np.ndarray:
    """Unscaled 108-vector."""
    tokens = p.tokens
    n_tok = len(tokens)
    out = np.empty(N_FEATURES)
    out[0] = sum(len(t) for t in tokens) / n_tok
    out[1] = sum(count_syllables(t, ctx.vowels) for t in tokens) / n_tok
    out[2] = n_tok
    out[3] = sum(1 for t in p.pos_tags if t in CONTENT_TAGS) / n_tok
    out[4] = len({t.lower() for t in tokens}) / n_tok
    tag_counts = Counter(p.pos_tags)
    for i, tag in enumerate(POS_TAGS):
        out[5 + i] = tag_counts.get(tag, 0) / n_tok
    tags = _tags(p)
    j = 23
    for key in LM_KEYS:
        seq = tokens if key[0] is Stream.TOKEN else tags
        rep = ctx.lms[key].score(seq)
        out[j] = rep.log10_prob_with_eos if ctx.logprob_includes_eos else rep.log10_prob_no_eos
        out[j + 1] = rep.ppl
        out[j + 2] = rep.ppl_no_eos
        j += 3
    for n in LM_ORDERS:
        grams = ngrams(tokens, n)
        table = ctx.quartile_tables[n]
        if grams:
            bins = Counter(table.get(g, 0) for g in grams)
            total = len(grams)
            for q in range(1, 5):
                out[j + q - 1] = 100.0 * bins.get(q, 0) / total
            out[j + 4] = 100.0 * bins.get(0, 0) / total
        else:
            # no n-grams of this size: count the paragraph as fully OOV
            out[j : j + 4] = 0.0
            out[j + 4] = 100.0
        j += 5
    return out


def extract(p: Paragraph, ctx: FeatureContext, *, scale: bool = True) -> np.ndarray:
    raw = raw_features(p, ctx)
    return raw / ctx.scaler if scale else raw


def extract_matrix(
    paragraphs: Sequence[Paragraph], ctx: FeatureContext, *, scale: bool = True
) -> np.ndarray:
    if not paragraphs:
        return np.zeros((0, N_FEATURES))
    return np.stack([extract(p, ctx, scale=scale) for p in paragraphs])


def fit_feature_context(
    train: Sequence[Paragraph],
    *,
    vowels: str = DEFAULT_VOWELS,
    logprob_includes_eos: bool = True,
) -> FeatureContext:
    """Train the 20 LMs and quartile tables on ``train`` and fit the max-abs scaler."""
    if not train:
        raise ValueError("empty training set")
    token_seqs = [p.tokens for p in train]
    tag_seqs = [_tags(p) for p in train]
    lms = {}
    for s, d, n in LM_KEYS:
        data = token_seqs if s is Stream.TOKEN else tag_seqs
        lms[(s, d, n)] = train_ngram(data, n, d, s)
    tables = {n: quartile_table(token_seqs, n) for n in LM_ORDERS}
    ctx = FeatureContext(lms, tables, np.ones(N_FEATURES), vowels, logprob_includes_eos)
    raw = extract_matrix(train, ctx, scale=False)
    scaler = np.abs(raw).max(axis=0)
    scaler[scaler == 0] = 1.0
    ctx.scaler = scaler
    return ctx


def _key_name(key: tuple[Stream, Direction, int]) -> str:
    s, d, n = key
    return f"lm_{s.value}_{d.value}_{n}.arpa"


def save_context(ctx: FeatureContext, directory: str | Path) -> None:
    """Write LMs (n-gram text format), quartile tables and scaler into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, lm in ctx.lms.items():
        save_model(lm, directory / _key_name(key))
    with open(directory / "quartiles.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for n in LM_ORDERS:
            for gram, q in ctx.quartile_tables[n].items():
                fh.write(json.dumps([n, list(gram), q], ensure_ascii=False) + "\n")
    meta = {
        "version": 1,
        "vowels": ctx.vowels,
        "logprob_includes_eos": ctx.logprob_includes_eos,
        "scaler": [float(x) for x in ctx.scaler],
    }
    (directory / "context.json").write_text(
        json.dumps(meta, indent=1, ensure_ascii=False), encoding="utf-8"
    )


def load_context(directory: str | Path) -> FeatureContext:
    directory = Path(directory)
    meta_path = directory / "context.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no feature context in {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    lms = {}
    for key in LM_KEYS:
        lm = load_model(directory / _key_name(key))
        if (lm.stream, lm.direction, lm.order) != key:
            raise ValueError(f"{_key_name(key)} holds a {lm.stream.value}/{lm.direction.value}/{lm.order} model")
        lms[key] = lm
    tables: dict[int, dict] = {n: {} for n in LM_ORDERS}
    with open(directory / "quartiles.jsonl", encoding="utf-8") as fh:
        for line in fh:
            n, gram, q = json.loads(line)
            tables[n][tuple(gram)] = q
    return FeatureContext(
        lms,
        tables,
        np.array(meta["scaler"], dtype=np.float64),
        meta["vowels"],
        meta["logprob_includes_eos"],
    )


def write_feature_csv(matrix: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(str(i) for i in range(matrix.shape[1])) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_feature_csv(path: str | Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    if header != [str(i) for i in range(len(header))]:
        raise ValueError("feature CSV header must list feature IDs 0..d-1")
    return np.array(rows).reshape(len(rows), len(header))


# --- trigram baselines -------------------------------------------------------

START, END = "\x02", "\x03"


class TrigramKind(str, enum.Enum):
    POS = "pos-trigram"
    CHAR = "char-trigram"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def paragraph_trigrams(p: Paragraph, kind: TrigramKind) -> list[tuple[str, str, str]]:
    if TrigramKind(kind) is TrigramKind.POS:
        seq = [START, START] + _tags(p) + [END, END]
        return [tuple(seq[i : i + 3]) for i in range(len(seq) - 2)]
    out = []
    for tok in p.tokens:
        chars = [ch for ch in tok if not _is_punct(ch)]
        if not chars:
            continue
        seq = [START, START] + chars + [END, END]
        out.extend(tuple(seq[i : i + 3]) for i in range(len(seq) - 2))
    return out


@dataclass(frozen=True)
class TrigramBaselineSpec:
    kind: TrigramKind
    vocabulary: tuple[tuple[str, str, str], ...]

    @property
    def index(self) -> dict:
        return {g: i for i, g in enumerate(self.vocabulary)}


def fit_trigram_baseline(
    train: Sequence[Paragraph], kind: TrigramKind | str, size: int = 1000
) -> TrigramBaselineSpec:
    counts: Counter = Counter()
    for p in train:
        counts.update(paragraph_trigrams(p, TrigramKind(kind)))
    ranked = sorted(counts, key=lambda g: (-counts[g], g))[:size]
    return TrigramBaselineSpec(TrigramKind(kind), tuple(ranked))


def extract_trigram_baseline(p: Paragraph, spec: TrigramBaselineSpec, index: dict | None = None) -> np.ndarray:
    """Relative frequency of each vocabulary trigram among all paragraph trigrams."""
    index = spec.index if index is None else index
    vec = np.zeros(len(spec.vocabulary))
    grams = paragraph_trigrams(p, spec.kind)
    if not grams:
        return vec
    for g in grams:
        i = index.get(g)
        if i is not None:
            vec[i] += 1.0
    return vec / len(grams)


def trigram_matrix(paragraphs: Sequence[Paragraph], spec: TrigramBaselineSpec) -> np.ndarray:
    index = spec.index
    if not paragraphs:
        return np.zeros((0, len(spec.vocabulary)))
    return np.stack([extract_trigram_baseline(p, spec, index) for p in paragraphs])


def save_trigram_spec(spec: TrigramBaselineSpec, path: str | Path) -> None:
    payload = {"kind": spec.kind.value, "vocabulary": [list(g) for g in spec.vocabulary]}
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_trigram_spec(path: str | Path) -> TrigramBaselineSpec:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return TrigramBaselineSpec(
        TrigramKind(payload["kind"]), tuple(tuple(g) for g in payload["vocabulary"])
    )

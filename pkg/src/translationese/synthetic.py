"""Deterministic synthetic translationese corpora and word-vector tables.

Translated paragraphs differ from originals the way the classic
translationese hypotheses predict: more function words (explicitation),
a frequency skew toward a few source-dependent function words
(interference), a narrower content vocabulary (simplification) and
slightly longer paragraphs.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import Label, Paragraph, PosTag, load_corpus, write_corpus

FUNCTION_WORDS = {
    "de": {
        PosTag.DET: ["der", "die", "das", "den", "dem", "ein", "eine", "einen"],
        PosTag.ADP: ["in", "mit", "von", "zu", "auf", "für", "bei", "nach"],
        PosTag.PRON: ["ich", "wir", "sie", "es", "er", "sich", "uns"],
        PosTag.AUX: ["ist", "sind", "hat", "haben", "wird", "werden"],
        PosTag.CCONJ: ["und", "oder", "aber"],
        PosTag.SCONJ: ["dass", "weil", "wenn", "ob"],
        PosTag.PART: ["nicht", "zu"],
    },
    "en": {
        PosTag.DET: ["the", "a", "an", "this", "that", "these", "our", "its"],
        PosTag.ADP: ["of", "in", "to", "for", "on", "with", "by", "at"],
        PosTag.PRON: ["i", "we", "it", "they", "he", "she", "us"],
        PosTag.AUX: ["is", "are", "has", "have", "will", "be"],
        PosTag.CCONJ: ["and", "or", "but"],
        PosTag.SCONJ: ["that", "because", "if", "whether"],
        PosTag.PART: ["not", "to"],
    },
    "es": {
        PosTag.DET: ["el", "la", "los", "las", "un", "una", "este", "esta"],
        PosTag.ADP: ["de", "en", "a", "por", "para", "con", "sobre", "entre"],
        PosTag.PRON: ["yo", "nosotros", "se", "lo", "ella", "él", "nos"],
        PosTag.AUX: ["es", "son", "ha", "han", "será", "está"],
        PosTag.CCONJ: ["y", "o", "pero"],
        PosTag.SCONJ: ["que", "porque", "si", "cuando"],
        PosTag.PART: ["no", "sí"],
    },
}

PUNCT = [".", ",", ":", ";"]
SYMBOLS = ["%", "€", "§"]
INTERJECTIONS = {"de": ["ach", "ja"], "en": ["oh", "yes"], "es": ["ay", "sí"]}

CONTENT_SIZES = {
    PosTag.NOUN: 420,
    PosTag.VERB: 220,
    PosTag.ADJ: 160,
    PosTag.ADV: 60,
    PosTag.PROPN: 70,
}

TEMPLATES = [
    "DET NOUN VERB DET ADJ NOUN PUNCT",
    "PRON AUX ADV VERB PUNCT",
    "DET NOUN ADP DET NOUN VERB ADV PUNCT",
    "PROPN VERB ADJ NOUN ADP PROPN PUNCT",
    "ADV PRON VERB DET NOUN CCONJ ADJ NOUN PUNCT",
    "DET ADJ NOUN VERB NUM NOUN PUNCT",
    "SCONJ PRON NOUN VERB PUNCT PRON AUX ADJ PUNCT",
    "NOUN CCONJ NOUN AUX ADJ PUNCT",
    "PRON VERB PART ADJ NOUN PUNCT",
]

# function-tag sequences inserted after content words in translations
EXPLICITATIONS = ["ADP DET", "DET", "PRON AUX", "CCONJ DET", "ADP"]

_SYLLABLES = {
    "de": ("bdfghklmnprstwz", "aeiouäöü", ["sch", "ch", "ng", "st", "nd"]),
    "en": ("bcdfghklmnprstvw", "aeiouy", ["th", "sh", "ng", "st", "ck"]),
    "es": ("bcdfglmnprstv", "aeiouáé", ["ll", "rr", "ch", "qu", "ñ"]),
}


def _seed_for(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _make_word(rng: np.random.Generator, lang: str) -> str:
    cons, vows, clusters = _SYLLABLES.get(lang, _SYLLABLES["en"])
    n_syl = int(rng.choice([1, 2, 2, 3, 3, 4]))
    parts = []
    for _ in range(n_syl):
        onset = clusters[rng.integers(len(clusters))] if rng.random() < 0.2 else cons[rng.integers(len(cons))]
        parts.append(onset + vows[rng.integers(len(vows))])
    if rng.random() < 0.5:
        parts.append(cons[rng.integers(len(cons))])
    return "".join(parts)


class Lexicon:
    """Per-language vocabulary, fixed by the language code alone."""

    def __init__(self, lang: str):
        self.lang = lang
        rng = np.random.default_rng(_seed_for("lexicon", lang))
        base = FUNCTION_WORDS.get(lang)
        if base is None:
            base = {
                tag: sorted({_make_word(rng, lang)[:4] for _ in range(len(words))})
                for tag, words in FUNCTION_WORDS["en"].items()
            }
        self.function = base
        taken = {w for ws in base.values() for w in ws}
        self.content: dict[PosTag, list[str]] = {}
        for tag, size in CONTENT_SIZES.items():
            words: list[str] = []
            while len(words) < size:
                w = _make_word(rng, lang)
                if tag is PosTag.PROPN:
                    w = w.capitalize()
                if w not in taken:
                    taken.add(w)
                    words.append(w)
            # frequent words tend to be short
            words.sort(key=lambda w: (len(w), w))
            self.content[tag] = words
        self.interjections = INTERJECTIONS.get(lang, ["oh"])

    def words(self) -> list[str]:
        out = [w for ws in self.function.values() for w in ws]
        out += [w for ws in self.content.values() for w in ws]
        out += PUNCT + SYMBOLS + self.interjections
        return sorted(set(out))


def _zipf_choice(rng: np.random.Generator, items: list[str], s: float, shift: int = 0) -> str:
    n = len(items)
    ranks = np.arange(1, n + 1, dtype=np.float64)
    p = ranks ** (-s)
    p /= p.sum()
    i = int(rng.choice(n, p=p))
    return items[(i + shift) % n]


class ParagraphGenerator:
    def __init__(
        self,
        lang: str,
        source: str | None,
        *,
        strength: float = 1.0,
        mean_len: float = 40.0,
    ):
        self.lex = Lexicon(lang)
        self.lang = lang
        self.source = source
        self.translated = source is not None
        self.strength = strength if self.translated else 0.0
        self.mean_len = mean_len
        # interference: each source language favours different function words
        self.shift = _seed_for("shift", lang, source) % 5 if self.translated else 0

    def _function_word(self, rng, tag: PosTag) -> str:
        words = self.lex.function[tag]
        s = 0.3 + 2.2 * self.strength
        return _zipf_choice(rng, words, s, self.shift)

    def _content_word(self, rng, tag: PosTag) -> str:
        s = 1.0 + 0.35 * self.strength
        return _zipf_choice(rng, self.lex.content[tag], s)

    def _emit(self, rng, tag: PosTag) -> str:
        if tag in self.lex.content:
            return self._content_word(rng, tag)
        if tag in self.lex.function:
            return self._function_word(rng, tag)
        if tag is PosTag.PUNCT:
            return PUNCT[int(rng.choice(len(PUNCT), p=[0.6, 0.25, 0.1, 0.05]))]
        if tag is PosTag.NUM:
            return str(int(rng.integers(1, 2000)))
        if tag is PosTag.SYM:
            return SYMBOLS[int(rng.integers(len(SYMBOLS)))]
        if tag is PosTag.INTJ:
            return self.lex.interjections[int(rng.integers(len(self.lex.interjections)))]
        return "xx" + str(int(rng.integers(10)))

    def paragraph(self, rng: np.random.Generator, pid: str) -> Paragraph:
        extra = 6.0 * self.strength
        target = max(12, int(round(rng.normal(self.mean_len + extra, 8.0))))
        p_insert = 0.45 * self.strength
        tokens: list[str] = []
        tags: list[PosTag] = []
        while len(tokens) < target:
            template = TEMPLATES[int(rng.integers(len(TEMPLATES)))].split()
            for name in template:
                tag = PosTag(name)
                tokens.append(self._emit(rng, tag))
                tags.append(tag)
                if tag in self.lex.content and rng.random() < p_insert:
                    for fname in EXPLICITATIONS[int(rng.integers(len(EXPLICITATIONS)))].split():
                        ftag = PosTag(fname)
                        tokens.append(self._emit(rng, ftag))
                        tags.append(ftag)
            # rare tags, more often in originals
            r = rng.random()
            rare = 0.06 * (1.0 - 0.8 * self.strength)
            if r < rare:
                tag = [PosTag.X, PosTag.SYM, PosTag.INTJ][int(rng.integers(3))]
                tokens.append(self._emit(rng, tag))
                tags.append(tag)
        label = Label.TRANSLATED if self.translated else Label.ORIGINAL
        return Paragraph(
            id=pid,
            language=self.lang,
            source_language=self.source,
            label=label,
            tokens=tuple(tokens),
            pos_tags=tuple(tags),
        )


def generate_corpus(
    cells: Mapping[tuple[str, str | None], int],
    seed: int,
    *,
    strength: float = 1.0,
    mean_len: float = 40.0,
    prefix: str = "p",
) -> list[Paragraph]:
    """Generate ``cells[(language, source)]`` paragraphs per cell.

    ``source`` is ``None`` for originals. Output order is cell order, then
    generation order; ids are ``{prefix}-{language}-{source|orig}-{i}``.
    """
    out = []
    for (lang, src), n in cells.items():
        gen = ParagraphGenerator(lang, src, strength=strength, mean_len=mean_len)
        rng = np.random.default_rng(_seed_for("corpus", seed, lang, src))
        tag = src or "orig"
        for i in range(n):
            out.append(gen.paragraph(rng, f"{prefix}-{lang}-{tag}-{i:05d}"))
    return out


def marker_corpus(
    n_per_class: int,
    marker: str,
    seed: int,
    *,
    lang: str = "de",
    source: str = "en",
    rate: float = 0.15,
    prefix: str = "m",
) -> list[Paragraph]:
    """Class-neutral paragraphs with ``marker`` injected into the translated half.

    Both halves are drawn from the same (original) distribution; the marker
    token, tagged X, is the only class signal.
    """
    gen = ParagraphGenerator(lang, None, mean_len=30.0)
    rng = np.random.default_rng(_seed_for("marker", seed, marker, lang, source))
    out = []
    for i in range(2 * n_per_class):
        base = gen.paragraph(rng, f"{prefix}-{i:05d}")
        if i % 2 == 0:
            out.append(base)
            continue
        tokens = list(base.tokens)
        tags = list(base.pos_tags)
        n_ins = max(1, int(round(rate * len(tokens))))
        for _ in range(n_ins):
            pos = int(rng.integers(len(tokens) + 1))
            tokens.insert(pos, marker)
            tags.insert(pos, PosTag.X)
        out.append(
            Paragraph(
                id=base.id,
                language=lang,
                source_language=source,
                label=Label.TRANSLATED,
                tokens=tuple(tokens),
                pos_tags=tuple(tags),
            )
        )
    return out


def generate_vectors(
    words: Iterable[str],
    dim: int,
    seed: int,
    *,
    coverage: float = 0.9,
    tag_of: Mapping[str, PosTag] | None = None,
) -> dict[str, np.ndarray]:
    """Word vectors with per-tag cluster structure, like real embeddings.

    A deterministic ``1 - coverage`` share of non-function words is left
    out so that lookups exercise the OOV path.
    """
    rng = np.random.default_rng(_seed_for("vectors", seed, dim))
    centroids = {t: rng.normal(0.0, 1.0, dim) for t in PosTag}
    out = {}
    for w in sorted(set(words)):
        tag = tag_of.get(w) if tag_of else None
        keep = _seed_for("keep", seed, w) % 1000 < coverage * 1000
        if tag is None or tag in CONTENT_SIZES:
            if not keep:
                continue
        wr = np.random.default_rng(_seed_for("vec", seed, w))
        v = wr.normal(0.0, 1.0, dim)
        if tag is not None:
            v = 0.7 * centroids[tag] + 0.7 * v
        out[w] = np.round(0.1 * v / np.sqrt(2.0), 5)
    return out


def tag_map(lexicons: Iterable[Lexicon]) -> dict[str, PosTag]:
    out: dict[str, PosTag] = {}
    for lex in lexicons:
        for tag, ws in list(lex.function.items()) + list(lex.content.items()):
            for w in ws:
                out.setdefault(w, tag)
        for w in PUNCT:
            out[w] = PosTag.PUNCT
        for w in SYMBOLS:
            out[w] = PosTag.SYM
        for w in lex.interjections:
            out.setdefault(w, PosTag.INTJ)
    return out


MINI_CELLS = {("de", None): 1000, ("de", "en"): 1000}
MINI_SEED = 20210901
MINI_VEC_DIM = 50


def mini_corpus_path() -> Path:
    return Path(str(resources.files("translationese") / "data" / "mini.jsonl"))


def mini_vec_path() -> Path:
    return Path(str(resources.files("translationese") / "data" / "mini.vec"))


def build_mini_corpus() -> list[Paragraph]:
    return generate_corpus(MINI_CELLS, MINI_SEED, prefix="mini")


def load_mini_corpus() -> list[Paragraph]:
    return load_corpus(mini_corpus_path())


def write_bundled_data(directory: str | Path | None = None) -> None:
    """Regenerate the bundled corpus and vector table."""
    from .embeddings import EmbeddingTable, save_vec

    directory = Path(directory) if directory else mini_corpus_path().parent
    directory.mkdir(parents=True, exist_ok=True)
    paragraphs = build_mini_corpus()
    write_corpus(paragraphs, directory / "mini.jsonl")
    lexicons = [Lexicon(lang) for lang in ("de", "en", "es")]
    words = set()
    for lex in lexicons:
        words.update(lex.words())
    vectors = generate_vectors(words, MINI_VEC_DIM, MINI_SEED, tag_of=tag_map(lexicons))
    save_vec(EmbeddingTable(MINI_VEC_DIM, vectors), directory / "mini.vec")


if __name__ == "__main__":
    write_bundled_data()

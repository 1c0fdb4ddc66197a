"""Paragraph records, JSONL ingestion and balanced dataset assembly."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class CorpusError(ValueError):
    pass


class Label(str, enum.Enum):
    ORIGINAL = "original"
    TRANSLATED = "translated"


class PosTag(str, enum.Enum):
    """Universal POS inventory, in feature order (IDs 5-22)."""

    ADJ = "ADJ"
    ADP = "ADP"
    ADV = "ADV"
    AUX = "AUX"
    CCONJ = "CCONJ"
    DET = "DET"
    INTJ = "INTJ"
    NOUN = "NOUN"
    NUM = "NUM"
    PART = "PART"
    PRON = "PRON"
    PROPN = "PROPN"
    PUNCT = "PUNCT"
    SCONJ = "SCONJ"
    SPACE = "SPACE"
    SYM = "SYM"
    VERB = "VERB"
    X = "X"


POS_TAGS: tuple[PosTag, ...] = tuple(PosTag)
_TAG_LOOKUP = {t.value: t for t in PosTag}


def parse_tag(value: str) -> PosTag:
    try:
        return _TAG_LOOKUP[value.upper()]
    except (KeyError, AttributeError):
        raise CorpusError(f"unknown POS tag {value!r}") from None


def parse_label(value: str) -> Label:
    try:
        return Label(value.lower())
    except (ValueError, AttributeError):
        raise CorpusError(f"unknown label {value!r}") from None


@dataclass(frozen=True)
class Paragraph:
    id: str
    language: str
    label: Label
    tokens: tuple[str, ...]
    pos_tags: tuple[PosTag, ...]
    source_language: str | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise CorpusError(f"paragraph {self.id!r} is empty")
        if len(self.tokens) != len(self.pos_tags):
            raise CorpusError(
                f"length mismatch in {self.id!r}: {len(self.tokens)} tokens, "
                f"{len(self.pos_tags)} tags"
            )
        if (self.label is Label.TRANSLATED) != (self.source_language is not None):
            raise CorpusError(
                f"paragraph {self.id!r}: translated paragraphs need a source "
                "language and originals must not have one"
            )

    @property
    def is_translated(self) -> bool:
        return self.label is Label.TRANSLATED

    @property
    def cell(self) -> tuple[str, str | None]:
        return (self.language, self.source_language)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "language": self.language,
            "source_language": self.source_language,
            "label": self.label.value,
            "tokens": list(self.tokens),
            "pos_tags": [t.value for t in self.pos_tags],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Paragraph":
        if not isinstance(rec, dict):
            raise CorpusError("record is not a JSON object")
        missing = {"id", "language", "label", "tokens", "pos_tags"} - rec.keys()
        if missing:
            raise CorpusError(f"missing field(s): {', '.join(sorted(missing))}")
        tokens, tags = rec["tokens"], rec["pos_tags"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusError("tokens must be a list of strings")
        if not isinstance(tags, list):
            raise CorpusError("pos_tags must be a list")
        if len(tokens) != len(tags):
            raise CorpusError("length mismatch")
        return cls(
            id=str(rec["id"]),
            language=str(rec["language"]),
            source_language=rec.get("source_language"),
            label=parse_label(rec["label"]),
            tokens=tuple(tokens),
            pos_tags=tuple(parse_tag(t) for t in tags),
        )


def dumps_paragraph(p: Paragraph) -> str:
    return json.dumps(p.to_record(), ensure_ascii=False, separators=(",", ":"))


def load_corpus(path: str | Path) -> list[Paragraph]:
    """Read a JSONL corpus; errors carry the 1-based line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed record at line {lineno}: {exc.msg}") from None
            try:
                out.append(Paragraph.from_record(rec))
            except CorpusError as exc:
                raise CorpusError(f"{exc} at line {lineno}") from None
    return out


def write_corpus(paragraphs: Iterable[Paragraph], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in paragraphs:
            fh.write(dumps_paragraph(p))
            fh.write("\n")


class DatasetKind(str, enum.Enum):
    TRG_SRC = "trg-src"
    TRG_ALL = "trg-all"
    ALL_ALL = "all-all"


# 42k pool -> 30k/6k/6k
DEFAULT_FRACTIONS = (5 / 7, 1 / 7, 1 / 7)


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    target_languages: frozenset[str]
    source_languages: frozenset[str]
    split_fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        object.__setattr__(self, "target_languages", frozenset(self.target_languages))
        object.__setattr__(self, "source_languages", frozenset(self.source_languages))
        fr = tuple(float(f) for f in self.split_fractions)
        object.__setattr__(self, "split_fractions", fr)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise CorpusError(f"split fractions must be 3 positive reals summing to 1, got {fr}")
        if not self.target_languages or not self.source_languages:
            raise CorpusError("dataset spec needs target and source languages")
        if self.kind is DatasetKind.TRG_SRC and (
            len(self.target_languages) != 1 or len(self.source_languages) != 1
        ):
            raise CorpusError("trg-src needs exactly one target and one source language")
        if self.kind is DatasetKind.TRG_ALL and len(self.target_languages) != 1:
            raise CorpusError("trg-all needs exactly one target language")
        if not self.pairs():
            raise CorpusError("dataset spec yields no (target, source) pairs")

    @classmethod
    def parse(cls, text: str, fractions: Sequence[float] | None = None) -> "DatasetSpec":
        """Parse ``trg-src:de:en``, ``trg-all:de:en,es`` or ``all-all:de,en,es``."""
        parts = text.strip().lower().split(":")
        try:
            kind = DatasetKind(parts[0])
        except ValueError:
            raise CorpusError(f"unknown dataset kind in {text!r}") from None
        langs = lambda s: frozenset(x for x in s.split(",") if x)  # noqa: E731
        if kind is DatasetKind.ALL_ALL:
            if len(parts) != 2:
                raise CorpusError(f"expected all-all:LANGS, got {text!r}")
            targets = sources = langs(parts[1])
        else:
            if len(parts) != 3:
                raise CorpusError(f"expected {kind.value}:TRG:SRC, got {text!r}")
            targets, sources = langs(parts[1]), langs(parts[2])
        kw = {} if fractions is None else {"split_fractions": tuple(fractions)}
        return cls(kind, targets, sources, **kw)

    def __str__(self) -> str:
        t = ",".join(sorted(self.target_languages))
        s = ",".join(sorted(self.source_languages))
        if self.kind is DatasetKind.ALL_ALL:
            return f"{self.kind.value}:{t}"
        return f"{self.kind.value}:{t}:{s}"

    def pairs(self) -> list[tuple[str, str]]:
        return [
            (t, s)
            for t in sorted(self.target_languages)
            for s in sorted(self.source_languages)
            if s != t
        ]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target_languages": sorted(self.target_languages),
            "source_languages": sorted(self.source_languages),
            "split_fractions": list(self.split_fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(
            DatasetKind(d["kind"]),
            frozenset(d["target_languages"]),
            frozenset(d["source_languages"]),
            tuple(d["split_fractions"]),
        )


@dataclass(frozen=True)
class DatasetBundle:
    train: tuple[Paragraph, ...]
    dev: tuple[Paragraph, ...]
    test: tuple[Paragraph, ...]
    spec: DatasetSpec
    seed: int
    meta: dict = field(default_factory=dict, compare=False)

    def splits(self) -> dict[str, tuple[Paragraph, ...]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _split_sizes(m: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    a = int(round(m * fractions[0]))
    b = int(round(m * fractions[1]))
    a = min(a, m)
    b = min(b, m - a)
    return a, b, m - a - b


def assemble_dataset(
    paragraphs: Sequence[Paragraph], spec: DatasetSpec, seed: int
) -> DatasetBundle:
    """Build a class-balanced train/dev/test bundle.

    Every translated (target, source) cell contributes ``m`` paragraphs and
    every target's original cell ``k * m``, where ``k`` is the number of
    sources per target, so both halves are equal in size. Over-represented
    cells are down-sampled uniformly at random under ``seed``; each cell is
    shuffled and cut by the split fractions in whole units so that every
    split stays balanced.
    """
    pairs = spec.pairs()
    per_target: dict[str, list[str]] = {}
    for t, s in pairs:
        per_target.setdefault(t, []).append(s)
    ks = {len(v) for v in per_target.values()}
    if len(ks) != 1:
        raise CorpusError("every target language must have the same number of sources")
    k = ks.pop()

    cells: dict[tuple[str, str | None], list[Paragraph]] = {}
    for t in per_target:
        cells[(t, None)] = []
    for pair in pairs:
        cells[pair] = []
    for p in paragraphs:
        if p.cell in cells:
            cells[p.cell].append(p)

    # capacity in units of m per cell
    limits = []
    for (t, s), members in cells.items():
        cap = len(members) if s is not None else len(members) // k
        limits.append((cap, (t, s)))
    m, worst = min(limits, key=lambda x: (x[0], x[1][0], x[1][1] or ""))
    if m < 1:
        t, s = worst
        name = f"({t}, {s})" if s is not None else f"({t}, original)"
        raise CorpusError(
            f"insufficient data for cell {name}: {len(cells[worst])} paragraphs"
        )

    rng = np.random.default_rng(seed)
    unit = _split_sizes(m, spec.split_fractions)
    out: dict[str, list[Paragraph]] = {"train": [], "dev": [], "test": []}
    for key in sorted(cells, key=lambda c: (c[0], c[1] or "")):
        members = cells[key]
        scale = 1 if key[1] is not None else k
        order = rng.permutation(len(members))[: m * scale]
        chosen = [members[i] for i in order]
        start = 0
        for name, size in zip(("train", "dev", "test"), unit):
            out[name].extend(chosen[start : start + size * scale])
            start += size * scale
    for name in out:
        perm = rng.permutation(len(out[name]))
        out[name] = [out[name][i] for i in perm]
    return DatasetBundle(
        train=tuple(out["train"]),
        dev=tuple(out["dev"]),
        test=tuple(out["test"]),
        spec=spec,
        seed=seed,
        meta={"cell_units": m},
    )


def labels_of(paragraphs: Sequence[Paragraph]) -> np.ndarray:
    """Translated = 1, Original = 0."""
    return np.array([1 if p.is_translated else 0 for p in paragraphs], dtype=np.int64)

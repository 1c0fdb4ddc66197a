"""Byte-pair style subword vocabulary for the recurrent and attention models.

Words are split into characters plus an end-of-word symbol. Training
repeatedly merges the most frequent adjacent pair (ties go to the
lexicographically smallest pair) until the vocabulary reaches the
requested size. Encoding replays the merges in the order they were learned.
"""

from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
EOW = "</w>"
DEFAULT_VOCAB_SIZE = 8000
FORMAT_VERSION = "translationese-subword 1"


class SubwordError(ValueError):
    pass


@dataclass
class SubwordVocab:
    merges: list[tuple[str, str]]
    vocab: dict[str, int]
    _ranks: dict = field(default_factory=dict, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._units = [None] * len(self.vocab)
        for unit, i in self.vocab.items():
            self._units[i] = unit

    @property
    def size(self) -> int:
        return len(self.vocab)

    def unit(self, idx: int) -> str:
        return self._units[idx]

    def segment(self, word: str) -> tuple[str, ...]:
        """Subword units of one word, after replaying the merges."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(word) + [EOW]
        while len(symbols) > 1:
            best = None
            for k in range(len(symbols) - 1):
                r = self._ranks.get((symbols[k], symbols[k + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, k)
            if best is None:
                break
            pair = self.merges[best[0]]
            merged = pair[0] + pair[1]
            out, k = [], 0
            while k < len(symbols):
                if k < len(symbols) - 1 and (symbols[k], symbols[k + 1]) == pair:
                    out.append(merged)
                    k += 2
                else:
                    out.append(symbols[k])
                    k += 1
            symbols = out
        result = tuple(symbols)
        self._cache[word] = result
        return result

    def encode(self, tokens: Sequence[str]) -> list[int]:
        ids: list[int] = []
        for tok in tokens:
            ids.extend(self.vocab.get(u, UNK_ID) for u in self.segment(tok))
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        text = "".join(self._units[i] for i in ids)
        parts = text.split(EOW)
        return parts[:-1] if parts and parts[-1] == "" else parts

    def __eq__(self, other) -> bool:
        return isinstance(other, SubwordVocab) and self.merges == other.merges and self.vocab == other.vocab


def _pairs(symbols: Sequence[str]) -> Iterable[tuple[str, str]]:
    return zip(symbols, symbols[1:])


def train_subword(corpus: Iterable[Sequence[str]], target_size: int = DEFAULT_VOCAB_SIZE) -> SubwordVocab:
    """Learn merges over the word types in ``corpus`` (an iterable of token lists)."""
    freq = Counter(tok for tokens in corpus for tok in tokens)
    if not freq:
        raise SubwordError("cannot train a subword vocabulary on an empty corpus")
    base = sorted({ch for word in freq for ch in word} | {EOW})
    if target_size < len(base) + 2:
        raise SubwordError(
            f"target_size {target_size} is below the {len(base) + 2} reserved and base units"
        )
    vocab = {PAD: PAD_ID, UNK: UNK_ID}
    for sym in base:
        vocab[sym] = len(vocab)

    words = [list(w) + [EOW] for w in sorted(freq)]
    counts = [freq[w] for w in sorted(freq)]
    pair_count: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, sym in enumerate(words):
        for p in _pairs(sym):
            pair_count[p] += counts[wi]
            where[p].add(wi)
    heap = [(-c, p) for p, c in pair_count.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(vocab) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair_count.get(pair, 0) != -neg or -neg <= 0:
            continue
        merges.append(pair)
        merged = pair[0] + pair[1]
        if merged not in vocab:
            vocab[merged] = len(vocab)
        touched: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            sym = words[wi]
            c = counts[wi]
            for p in _pairs(sym):
                pair_count[p] -= c
                touched.add(p)
            out, k = [], 0
            while k < len(sym):
                if k < len(sym) - 1 and sym[k] == pair[0] and sym[k + 1] == pair[1]:
                    out.append(merged)
                    k += 2
                else:
                    out.append(sym[k])
                    k += 1
            words[wi] = out
            for p in _pairs(out):
                pair_count[p] += c
                where[p].add(wi)
                touched.add(p)
        pair_count.pop(pair, None)
        for p in touched:
            c = pair_count.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_count.pop(p, None)
    return SubwordVocab(merges, vocab)


def dumps_vocab(v: SubwordVocab) -> str:
    lines = [FORMAT_VERSION, f"units {v.size}"]
    lines += [json.dumps(v.unit(i), ensure_ascii=False) for i in range(v.size)]
    lines.append(f"merges {len(v.merges)}")
    lines += [json.dumps(list(p), ensure_ascii=False) for p in v.merges]
    return "\n".join(lines) + "\n"


def loads_vocab(text: str) -> SubwordVocab:
    lines = text.split("\n")
    if not lines or lines[0] != FORMAT_VERSION:
        raise SubwordError("not a subword vocabulary file")
    n = int(lines[1].split()[1])
    units = [json.loads(x) for x in lines[2 : 2 + n]]
    head = lines[2 + n].split()
    if head[0] != "merges":
        raise SubwordError("malformed vocabulary file: missing merges section")
    m = int(head[1])
    merges = [tuple(json.loads(x)) for x in lines[3 + n : 3 + n + m]]
    return SubwordVocab(merges, {u: i for i, u in enumerate(units)})


def save_vocab(v: SubwordVocab, path: str | Path) -> None:
    Path(path).write_text(dumps_vocab(v), encoding="utf-8")


def load_vocab(path: str | Path) -> SubwordVocab:
    return loads_vocab(Path(path).read_text(encoding="utf-8"))

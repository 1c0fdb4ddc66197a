"""Katz back-off n-gram language models with Good-Turing discounting.

Probabilities are stored as base-10 logarithms, as in SRILM. A model of
order ``n`` pads every sequence with ``n - 1`` BOS symbols and one EOS and
holds the conditional distributions of every order ``1..n`` so that unseen
events can back off to shorter contexts.
"""

from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

FORMAT_VERSION = "translationese-ngram 1"
DISCOUNT_CEILING = 5
_TINY = 1e-12
# n-grams rarer than this are not stored and reach their probability by
# backing off (SRILM's documented gtNmin defaults, by order)
MIN_COUNTS = (1, 1, 2, 2, 2)


class Direction(str, enum.Enum):
    FORWARD = "fwd"
    BACKWARD = "bck"


class Stream(str, enum.Enum):
    TOKEN = "tok"
    POS = "pos"


@dataclass(frozen=True)
class ScoreReport:
    log10_prob_with_eos: float
    log10_prob_no_eos: float
    n_tokens: int

    @property
    def ppl(self) -> float:
        return 10.0 ** (-self.log10_prob_with_eos / (self.n_tokens + 1))

    @property
    def ppl_no_eos(self) -> float:
        return 10.0 ** (-self.log10_prob_no_eos / self.n_tokens)


def good_turing_discounts(count_of_counts: Counter, k: int = DISCOUNT_CEILING) -> dict[int, float]:
    """Katz discount coefficients ``d_r`` for ``1 <= r <= k``.

    Counts above ``k`` are not discounted. Invalid coefficients (outside
    ``(0, 1]``) fall back to 1, as does everything when no singletons exist.
    """
    n1 = count_of_counts.get(1, 0)
    out = {r: 1.0 for r in range(1, k + 1)}
    if n1 == 0:
        return out
    common = (k + 1) * count_of_counts.get(k + 1, 0) / n1
    if common >= 1.0:
        return out
    for r in range(1, k + 1):
        nr = count_of_counts.get(r, 0)
        if nr == 0:
            continue
        ratio = (r + 1) * count_of_counts.get(r + 1, 0) / (r * nr)
        d = (ratio - common) / (1.0 - common)
        if 0.0 < d <= 1.0:
            out[r] = d
    return out


class NgramModel:
    def __init__(
        self,
        order: int,
        direction: Direction,
        stream: Stream,
        vocabulary: Iterable[str],
        log10_probs: list[dict[tuple[str, ...], float]],
        log10_backoffs: list[dict[tuple[str, ...], float]],
    ):
        self.order = order
        self.direction = Direction(direction)
        self.stream = Stream(stream)
        self.vocabulary = frozenset(vocabulary)
        # index m-1 holds m-grams / (m-1)-length contexts
        self.log10_probs = log10_probs
        self.log10_backoffs = log10_backoffs
        self._predictable = tuple(sorted(self.vocabulary - {BOS}))

    @property
    def predictable(self) -> tuple[str, ...]:
        """Vocabulary symbols that can be predicted (everything but BOS)."""
        return self._predictable

    @property
    def has_unk(self) -> bool:
        return UNK in self.vocabulary

    def map_symbol(self, sym: str) -> str:
        if sym in self.vocabulary and sym not in (BOS, EOS):
            return sym
        if self.has_unk:
            return UNK
        raise KeyError(f"symbol {sym!r} not in closed vocabulary")

    def cond_log10(self, context: Sequence[str], word: str) -> float:
        """log10 P(word | context) with Katz back-off; ``context`` is oldest-first."""
        context = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        acc = 0.0
        for m in range(len(context) + 1, 0, -1):
            h = context[len(context) - (m - 1):] if m > 1 else ()
            lp = self.log10_probs[m - 1].get(h + (word,))
            if lp is not None:
                return acc + lp
            acc += self.log10_backoffs[m - 1].get(h, 0.0)
        raise KeyError(f"{word!r} has no unigram probability")

    def contexts(self, m: int) -> list[tuple[str, ...]]:
        """Contexts (length m-1) with stored statistics at order m."""
        if m == 1:
            return [()]
        seen = dict.fromkeys(ng[:-1] for ng in self.log10_probs[m - 1])
        return list(seen)

    def prepare(self, sequence: Sequence[str]) -> list[str]:
        seq = [self.map_symbol(s) for s in sequence]
        if self.direction is Direction.BACKWARD:
            seq.reverse()
        return seq

    def score(self, sequence: Sequence[str]) -> ScoreReport:
        """Score one paragraph as a single sentence (one BOS context, one EOS)."""
        if len(sequence) == 0:
            raise ValueError("cannot score an empty sequence")
        seq = self.prepare(sequence)
        padded = [BOS] * (self.order - 1) + seq + [EOS]
        total = 0.0
        n = self.order
        for i in range(len(seq)):
            total += self.cond_log10(padded[i : i + n - 1], padded[i + n - 1])
        eos = self.cond_log10(padded[len(seq) : len(seq) + n - 1], EOS)
        return ScoreReport(total + eos, total, len(seq))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NgramModel):
            return NotImplemented
        return (
            self.order == other.order
            and self.direction == other.direction
            and self.stream == other.stream
            and self.vocabulary == other.vocabulary
            and self.log10_probs == other.log10_probs
            and self.log10_backoffs == other.log10_backoffs
        )

    def same_tables(self, other: "NgramModel") -> bool:
        return (
            self.vocabulary == other.vocabulary
            and self.log10_probs == other.log10_probs
            and self.log10_backoffs == other.log10_backoffs
        )


def build_vocabulary(sequences: Sequence[Sequence[str]], stream: Stream) -> set[str]:
    if Stream(stream) is Stream.POS:
        from .corpus import POS_TAGS

        vocab = {t.value for t in POS_TAGS}
        vocab.update(s for seq in sequences for s in seq)
    else:
        freq = Counter(s for seq in sequences for s in seq)
        vocab = {w for w, c in freq.items() if c >= 2}
        vocab.add(UNK)
    vocab.update((BOS, EOS))
    return vocab


def _log10(p: float) -> float:
    return math.log10(p)


def train_ngram(
    sequences: Sequence[Sequence[str]],
    order: int,
    direction: Direction | str = Direction.FORWARD,
    stream: Stream | str = Stream.TOKEN,
    *,
    discount_ceiling: int = DISCOUNT_CEILING,
    min_counts: Sequence[int] = MIN_COUNTS,
) -> NgramModel:
    if not 1 <= order <= 5:
        raise ValueError(f"order must be in [1, 5], got {order}")
    sequences = [list(s) for s in sequences]
    if not sequences or not any(sequences):
        raise ValueError("empty training data")
    direction, stream = Direction(direction), Stream(stream)
    vocab = build_vocabulary(sequences, stream)
    predictable = sorted(vocab - {BOS})
    has_unk = UNK in vocab

    counts: list[Counter] = [Counter() for _ in range(order)]
    for seq in sequences:
        if not seq:
            continue
        mapped = [s if s in vocab else UNK for s in seq] if has_unk else list(seq)
        if direction is Direction.BACKWARD:
            mapped.reverse()
        padded = [BOS] * (order - 1) + mapped + [EOS]
        for i in range(order - 1, len(padded)):
            for m in range(1, order + 1):
                counts[m - 1][tuple(padded[i - m + 1 : i + 1])] += 1

    log10_probs: list[dict[tuple[str, ...], float]] = []
    log10_backoffs: list[dict[tuple[str, ...], float]] = []

    # unigrams
    uni = counts[0]
    total = sum(uni.values())
    disc = good_turing_discounts(Counter(uni.values()), discount_ceiling)
    probs: dict[tuple[str, ...], float] = {}
    for w in predictable:
        c = uni.get((w,), 0)
        if c:
            probs[(w,)] = (disc[c] if c <= discount_ceiling else 1.0) * c / total
    mass = sum(probs.values())
    zeros = [w for w in predictable if (w,) not in probs]
    if zeros:
        if 1.0 - mass > _TINY:
            share = (1.0 - mass) / len(zeros)
            for w in zeros:
                probs[(w,)] = share
        else:
            # nothing freed: reserve one pseudo-count per unseen symbol
            denom = total + len(zeros)
            probs = {(w,): uni.get((w,), 0) / denom for w in predictable if uni.get((w,), 0)}
            for w in zeros:
                probs[(w,)] = 1.0 / denom
    elif mass < 1.0:
        probs = {k: v / mass for k, v in probs.items()}
    log10_probs.append({k: _log10(probs[k]) for k in sorted(probs)})
    log10_backoffs.append({})

    n_vocab = len(predictable)
    for m in range(2, order + 1):
        grouped: dict[tuple[str, ...], list[tuple[str, int]]] = defaultdict(list)
        for ng, c in counts[m - 1].items():
            grouped[ng[:-1]].append((ng[-1], c))
        disc = good_turing_discounts(Counter(counts[m - 1].values()), discount_ceiling)
        min_count = min_counts[m - 1] if m <= len(min_counts) else min_counts[-1]
        cur_probs: dict[tuple[str, ...], float] = {}
        cur_bows: dict[tuple[str, ...], float] = {}
        for h in sorted(grouped):
            items = sorted(grouped[h])
            ch = sum(c for _, c in items)
            items = [(w, c) for w, c in items if c >= min_count]
            if not items:
                continue
            seen = {w: (disc[c] if c <= discount_ceiling else 1.0) * c / ch for w, c in items}
            mass = sum(seen.values())
            if len(seen) == n_vocab:
                seen = {w: p / mass for w, p in seen.items()}
                bow = 1.0
            else:
                if 1.0 - mass <= _TINY:
                    seen = {w: c / (ch + 1) for w, c in items}
                    mass = ch / (ch + 1)
                lower_seen = sum(
                    10.0 ** _backoff_log10((log10_probs, log10_backoffs), h[1:], w) for w in seen
                )
                denom = 1.0 - lower_seen
                if denom <= 1e-9:
                    denom = sum(
                        10.0 ** _backoff_log10((log10_probs, log10_backoffs), h[1:], w)
                        for w in predictable
                        if w not in seen
                    )
                bow = (1.0 - mass) / denom
            for w, p in seen.items():
                cur_probs[h + (w,)] = p
            cur_bows[h] = bow
        log10_probs.append({k: _log10(v) for k, v in cur_probs.items()})
        log10_backoffs.append({h: _log10(b) for h, b in cur_bows.items()})
    return NgramModel(order, direction, stream, vocab, log10_probs, log10_backoffs)


def _backoff_log10(tables, context: tuple[str, ...], word: str) -> float:
    """log10 P(word | context) from partially built tables (orders <= len(context)+1)."""
    log10_probs, log10_backoffs = tables
    acc = 0.0
    for m in range(len(context) + 1, 0, -1):
        h = context[len(context) - (m - 1):] if m > 1 else ()
        lp = log10_probs[m - 1].get(h + (word,))
        if lp is not None:
            return acc + lp
        acc += log10_backoffs[m - 1].get(h, 0.0)
    raise KeyError(word)


def _escape(sym: str) -> str:
    return (
        sym.replace("\\", "\\\\").replace(" ", "\\s").replace("\t", "\\t").replace("\n", "\\n")
    )


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "s": " ", "t": "\t", "n": "\n"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def dumps_model(model: NgramModel) -> str:
    lines = [
        f"\\{FORMAT_VERSION}",
        f"order={model.order}",
        f"direction={model.direction.value}",
        f"stream={model.stream.value}",
        "\\vocab:",
    ]
    lines += [_escape(w) for w in sorted(model.vocabulary)]
    lines.append("\\data\\")
    for m in range(1, model.order + 1):
        lines.append(f"ngram {m}={len(model.log10_probs[m - 1])}")
    for m in range(1, model.order + 1):
        lines.append(f"\\{m}-grams:")
        for ng, lp in model.log10_probs[m - 1].items():
            lines.append(f"{lp!r}\t{' '.join(_escape(w) for w in ng)}")
        lines.append(f"\\{m}-backoffs:")
        for h, b in model.log10_backoffs[m - 1].items():
            lines.append(f"{b!r}\t{' '.join(_escape(w) for w in h)}")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> NgramModel:
    lines = text.split("\n")
    if not lines or lines[0] != f"\\{FORMAT_VERSION}":
        raise ValueError("not a translationese n-gram model file (bad header)")
    header = {}
    i = 1
    while not lines[i].startswith("\\"):
        key, _, value = lines[i].partition("=")
        header[key] = value
        i += 1
    order = int(header["order"])
    if lines[i] != "\\vocab:":
        raise ValueError(f"line {i + 1}: expected vocabulary section")
    i += 1
    vocab = []
    while lines[i] != "\\data\\":
        vocab.append(_unescape(lines[i]))
        i += 1
    i += 1
    while lines[i].startswith("ngram "):
        i += 1
    probs: list[dict] = []
    bows: list[dict] = []
    for m in range(1, order + 1):
        for section, target in ((f"\\{m}-grams:", probs), (f"\\{m}-backoffs:", bows)):
            if lines[i] != section:
                raise ValueError(f"line {i + 1}: expected {section}")
            i += 1
            table = {}
            while not lines[i].startswith("\\"):
                value, _, gram = lines[i].partition("\t")
                key = tuple(_unescape(w) for w in gram.split(" ")) if gram else ()
                table[key] = float(value)
                i += 1
            target.append(table)
    if lines[i] != "\\end\\":
        raise ValueError(f"line {i + 1}: expected end marker")
    return NgramModel(order, header["direction"], header["stream"], vocab, probs, bows)


def save_model(model: NgramModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path: str | Path) -> NgramModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))

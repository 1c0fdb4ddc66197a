"""Trainable paragraph classifiers: a fastText-style bag model, an LSTM and
the simplified cumulative-sum transformer.

All three produce two-way class probabilities (index 1 = translated) and
share one training loop: cross-entropy, Adam, mini-batches, early stopping
on dev accuracy and return of the best-dev parameters.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .corpus import DatasetBundle, Paragraph, labels_of
from .embeddings import EmbeddingTable
from .subword import DEFAULT_VOCAB_SIZE, PAD_ID, SubwordVocab, load_vocab, save_vocab, train_subword

log = logging.getLogger(__name__)

LSTM_CORE_PARAMS = 131_584
TRANSFORMER_CORE_PARAMS = 768
N_CLASSES = 2


class ModelKind(str, Enum):
    FASTTEXT = "fasttext"
    LSTM = "lstm"
    TRANSFORMER = "transformer"


class TrainingError(RuntimeError):
    pass


@dataclass
class NeuralConfig:
    seed: int = 0
    epochs: int = 20
    patience: int = 3
    batch_size: int = 32
    lr: float = 1e-2
    dim: int = 128
    hidden: int = 128
    vocab_size: int = DEFAULT_VOCAB_SIZE
    max_len: int = 256
    buckets: int = 100_000
    dropout: float = 0.0
    float64: bool = False

    @classmethod
    def for_kind(cls, kind: ModelKind | str, **overrides) -> "NeuralConfig":
        """Per-family defaults; fastText embeds in 100 dimensions."""
        base = {"dim": 100} if ModelKind(kind) is ModelKind.FASTTEXT else {}
        base.update(overrides)
        return cls(**base)


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def _param(data, name, dtype) -> ad.Tensor:
    return ad.Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)


class _Base:
    kind: ModelKind
    params: dict[str, ad.Tensor]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def logits(self, ids: np.ndarray, mask: np.ndarray, *, train=False, rng=None) -> ad.Tensor:
        raise NotImplementedError

    def _head(self, pooled: ad.Tensor, train: bool, rng, dropout: float) -> ad.Tensor:
        if train and dropout > 0.0:
            keep = (rng.random(pooled.shape) >= dropout).astype(pooled.data.dtype) / (1.0 - dropout)
            pooled = ad.mul(pooled, keep)
        return ad.add(ad.matmul(pooled, self.params["head.weight"]), self.params["head.bias"])

    def batch(self, docs: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray]:
        encoded = [self.encode(d) for d in docs]
        if any(len(e) == 0 for e in encoded):
            raise ValueError("empty document")
        width = max(len(e) for e in encoded)
        ids = np.full((len(encoded), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(encoded), width))
        for r, e in enumerate(encoded):
            ids[r, : len(e)] = e
            mask[r, : len(e)] = 1.0
        return ids, mask

    def predict_proba(self, docs: Sequence[Sequence[str]], batch_size: int = 256) -> np.ndarray:
        out = []
        with ad.float64_mode(self.params["embedding"].data.dtype == np.float64):
            for start in range(0, len(docs), batch_size):
                ids, mask = self.batch(docs[start : start + batch_size])
                out.append(ad.softmax(self.logits(ids, mask)).data)
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, N_CLASSES))

    def predict(self, docs: Sequence[Sequence[str]]) -> np.ndarray:
        """0 = original, 1 = translated; an exact tie predicts original."""
        p = self.predict_proba(docs)
        return (p[:, 1] > p[:, 0]).astype(np.int64)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.params[k].data.dtype)

    def core_parameter_count(self) -> int:
        return sum(
            p.size for k, p in self.params.items() if not k.startswith(("embedding", "head"))
        )


# ---------------------------------------------------------------- fastText


def _bucket(a: str, b: str, buckets: int) -> int:
    digest = hashlib.blake2b(f"{a}\x1f{b}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


class FastTextModel(_Base):
    """Mean of word and hashed word-bigram embeddings, then a linear softmax layer.

    Row 0 of the table is padding, row 1 stands for unknown words, then one
    row per training word, then ``buckets`` bigram rows.
    """

    kind = ModelKind.FASTTEXT

    def __init__(
        self,
        words: Sequence[str],
        dim: int = 100,
        buckets: int = 100_000,
        *,
        seed: int = 0,
        pretrained: EmbeddingTable | None = None,
        dropout: float = 0.0,
    ):
        if pretrained is not None:
            dim = pretrained.dim
        self.words = list(words)
        self.word_index = {w: i + 2 for i, w in enumerate(self.words)}
        self.dim = dim
        self.buckets = buckets
        self.dropout = dropout
        self._bigram_cache: dict = {}
        dtype = ad.default_dtype()
        rng = np.random.default_rng(seed)
        n_rows = 2 + len(self.words) + buckets
        table = _uniform(rng, 1.0 / dim, (n_rows, dim))
        table[0] = 0.0
        if pretrained is not None:
            for w, r in self.word_index.items():
                if w in pretrained:
                    table[r] = pretrained.lookup(w)
        emb = _param(table, "embedding", dtype)
        emb.sparse = True
        self.params = {
            "embedding": emb,
            "head.weight": _param(np.zeros((dim, N_CLASSES)), "head.weight", dtype),
            "head.bias": _param(np.zeros(N_CLASSES), "head.bias", dtype),
        }

    def _bigram_row(self, a: str, b: str) -> int:
        key = (a, b)
        row = self._bigram_cache.get(key)
        if row is None:
            row = 2 + len(self.words) + _bucket(a, b, self.buckets)
            self._bigram_cache[key] = row
        return row

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        rows = [self.word_index.get(t, 1) for t in tokens]
        rows += [self._bigram_row(a, b) for a, b in zip(tokens, tokens[1:])]
        return np.asarray(rows, dtype=np.int64)

    def document_vectors(self, ids: np.ndarray, mask: np.ndarray) -> ad.Tensor:
        return ad.mean_pool(ad.embedding_lookup(self.params["embedding"], ids), mask)

    def logits(self, ids, mask, *, train=False, rng=None) -> ad.Tensor:
        return self._head(self.document_vectors(ids, mask), train, rng, self.dropout)

    def config(self) -> dict:
        return {"dim": self.dim, "buckets": self.buckets, "dropout": self.dropout}


# ---------------------------------------------------------------- LSTM


class LstmModel(_Base):
    """Single-layer unidirectional LSTM over subword ids, mean of all hidden states."""

    kind = ModelKind.LSTM

    def __init__(
        self,
        vocab: SubwordVocab,
        dim: int = 128,
        hidden: int = 128,
        *,
        seed: int = 0,
        max_len: int = 256,
        dropout: float = 0.0,
    ):
        self.vocab = vocab
        self.dim, self.hidden, self.max_len, self.dropout = dim, hidden, max_len, dropout
        dtype = ad.default_dtype()
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(hidden)
        self.params = {
            "embedding": _param(rng.normal(size=(vocab.size, dim)), "embedding", dtype),
            "lstm.w_ih": _param(_uniform(rng, bound, (dim, 4 * hidden)), "lstm.w_ih", dtype),
            "lstm.w_hh": _param(_uniform(rng, bound, (hidden, 4 * hidden)), "lstm.w_hh", dtype),
            "lstm.bias": _param(_uniform(rng, bound, (4 * hidden,)), "lstm.bias", dtype),
            "head.weight": _param(_uniform(rng, bound, (hidden, N_CLASSES)), "head.weight", dtype),
            "head.bias": _param(_uniform(rng, bound, (N_CLASSES,)), "head.bias", dtype),
        }
        expected = 4 * (dim * hidden + hidden * hidden + hidden)
        if (dim, hidden) == (128, 128):
            expected = LSTM_CORE_PARAMS
        if self.core_parameter_count() != expected:
            raise AssertionError(f"LSTM core has {self.core_parameter_count()} parameters, expected {expected}")

    def encode(self, tokens):
        return np.asarray(self.vocab.encode(tokens)[: self.max_len], dtype=np.int64)

    def hidden_states(self, ids: np.ndarray) -> ad.Tensor:
        """Hidden state at every position, shape ``(batch, length, hidden)``."""
        p = self.params
        H = self.hidden
        x = ad.embedding_lookup(p["embedding"], ids)
        xw = ad.add(ad.matmul(x, p["lstm.w_ih"]), p["lstm.bias"])
        batch = ids.shape[0]
        h = ad.Tensor(np.zeros((batch, H), dtype=xw.data.dtype))
        c = ad.Tensor(np.zeros((batch, H), dtype=xw.data.dtype))
        states = []
        for t in range(ids.shape[1]):
            gates = ad.add(xw[:, t, :], ad.matmul(h, p["lstm.w_hh"]))
            i = ad.sigmoid(gates[:, 0:H])
            f = ad.sigmoid(gates[:, H : 2 * H])
            g = ad.tanh(gates[:, 2 * H : 3 * H])
            o = ad.sigmoid(gates[:, 3 * H :])
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            states.append(h)
        return ad.stack(states, axis=1)

    def logits(self, ids, mask, *, train=False, rng=None):
        pooled = ad.mean_pool(self.hidden_states(ids), mask)
        return self._head(pooled, train, rng, self.dropout)

    def config(self) -> dict:
        return {"dim": self.dim, "hidden": self.hidden, "max_len": self.max_len, "dropout": self.dropout}


# ---------------------------------------------------------------- simplified transformer


def contextualise(x: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Return ``(x_hat, context)`` for a ``(batch, length, dim)`` input.

    ``context`` is the running sum over positions, each position gets the
    weight ``x_j . context_j`` and ``x_hat`` is ``x`` scaled by that weight.
    """
    context = ad.cumulative_sum(x, axis=-2)
    weights = ad.columnwise_dot(x, context, axis=-1)
    return ad.broadcast_mul(x, weights, axis=-1), context


def feature_map(x: ad.Tensor) -> ad.Tensor:
    return ad.absolute(ad.add(ad.gelu(x), 1.0))


def simple_attention(query, key, value, mask: np.ndarray | None = None) -> ad.Tensor:
    """Element-wise attention: energies normalized over positions per feature."""
    d = query.shape[-1]
    energy = ad.mul(ad.mul(feature_map(query), feature_map(key)), 1.0 / math.sqrt(d))
    if mask is not None:
        energy = ad.mul(energy, mask[..., None].astype(energy.data.dtype))
    total = ad.sum(energy, axis=-2, keepdims=True)
    return ad.mul(ad.div(energy, total), value)


class SimplifiedTransformerModel(_Base):
    """One encoder block and a two-block decoder without projections or position tables."""

    kind = ModelKind.TRANSFORMER

    def __init__(self, vocab: SubwordVocab, dim: int = 128, *, seed: int = 0, max_len: int = 256, dropout: float = 0.0):
        self.vocab = vocab
        self.dim, self.max_len, self.dropout = dim, max_len, dropout
        dtype = ad.default_dtype()
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(dim)
        self.params = {"embedding": _param(rng.normal(size=(vocab.size, dim)), "embedding", dtype)}
        for name in ("encoder.norm", "decoder.norm1", "decoder.norm2"):
            self.params[f"{name}.gain"] = _param(np.ones(dim), f"{name}.gain", dtype)
            self.params[f"{name}.shift"] = _param(np.zeros(dim), f"{name}.shift", dtype)
        self.params["head.weight"] = _param(_uniform(rng, bound, (dim, N_CLASSES)), "head.weight", dtype)
        self.params["head.bias"] = _param(_uniform(rng, bound, (N_CLASSES,)), "head.bias", dtype)
        expected = TRANSFORMER_CORE_PARAMS if dim == 128 else 6 * dim
        if self.core_parameter_count() != expected:
            raise AssertionError(
                f"simplified transformer core has {self.core_parameter_count()} parameters, expected {expected}"
            )

    def encode(self, tokens):
        return np.asarray(self.vocab.encode(tokens)[: self.max_len], dtype=np.int64)

    def _norm(self, name: str, x: ad.Tensor, m3: np.ndarray) -> ad.Tensor:
        p = self.params
        return ad.mul(ad.layer_norm(x, p[f"{name}.gain"], p[f"{name}.shift"]), m3)

    def sequence_output(self, ids: np.ndarray, mask: np.ndarray) -> ad.Tensor:
        """Decoder output ``Y`` with shape ``(batch, length, dim)``."""
        m3 = mask[..., None].astype(ad.default_dtype())
        x = ad.mul(ad.embedding_lookup(self.params["embedding"], ids), m3)

        x_hat, context = contextualise(x)
        encoded = self._norm("encoder.norm", ad.add(x, simple_attention(x_hat, context, x_hat, mask)), m3)

        d_hat, d_context = contextualise(encoded)
        block1 = self._norm(
            "decoder.norm1", ad.add(encoded, simple_attention(d_hat, d_context, d_hat, mask)), m3
        )

        total = ad.sum(x, axis=-2, keepdims=True)
        key = ad.mul(total, np.ones_like(m3))
        block2 = self._norm("decoder.norm2", ad.add(block1, simple_attention(block1, key, encoded, mask)), m3)
        return block2

    def logits(self, ids, mask, *, train=False, rng=None):
        pooled = ad.mean_pool(self.sequence_output(ids, mask), mask)
        return self._head(pooled, train, rng, self.dropout)

    def config(self) -> dict:
        return {"dim": self.dim, "max_len": self.max_len, "dropout": self.dropout}


# ---------------------------------------------------------------- construction, training, persistence

Model = FastTextModel | LstmModel | SimplifiedTransformerModel


def build_model(
    kind: ModelKind | str,
    train: Sequence[Paragraph],
    config: NeuralConfig,
    pretrained: EmbeddingTable | None = None,
) -> Model:
    """Fit the input pipeline (word list or subword vocabulary) on ``train`` and initialize."""
    kind = ModelKind(kind)
    if kind is ModelKind.FASTTEXT:
        words = sorted({t for p in train for t in p.tokens})
        return FastTextModel(
            words, config.dim, config.buckets, seed=config.seed, pretrained=pretrained, dropout=config.dropout
        )
    vocab = train_subword([p.tokens for p in train], config.vocab_size)
    if kind is ModelKind.LSTM:
        return LstmModel(vocab, config.dim, config.hidden, seed=config.seed, max_len=config.max_len, dropout=config.dropout)
    return SimplifiedTransformerModel(vocab, config.dim, seed=config.seed, max_len=config.max_len, dropout=config.dropout)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "dev_accuracy"])
            for epoch, loss, acc in self.rows:
                w.writerow([epoch, repr(float(loss)), repr(float(acc))])


def accuracy(model: Model, paragraphs: Sequence[Paragraph], labels=None) -> float:
    if not paragraphs:
        raise ValueError("no paragraphs to evaluate")
    pred = model.predict([p.tokens for p in paragraphs])
    y = labels_of(paragraphs) if labels is None else np.asarray(labels)
    return float(np.mean(pred == y))


def fit(
    model: Model,
    train: Sequence[Paragraph],
    dev: Sequence[Paragraph],
    config: NeuralConfig,
    train_labels=None,
    dev_labels=None,
) -> TrainingLog:
    """Train in place; on return ``model`` holds its best-dev parameters.

    Labels default to the paragraphs' own; passing them explicitly lets a
    caller train on permuted labels.
    """
    rng = np.random.default_rng(config.seed)
    docs = [p.tokens for p in train]
    y = labels_of(train) if train_labels is None else np.asarray(train_labels, dtype=np.int64)
    state = ad.AdamState()
    params = model.params
    history = TrainingLog()
    best = model.parameter_arrays()
    best_acc = -1.0
    stale = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(docs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            ids, mask = model.batch([docs[i] for i in idx])
            loss = ad.cross_entropy(model.logits(ids, mask, train=True, rng=rng), y[idx])
            step += 1
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss became {value} at step {step} (epoch {epoch})")
            ad.backward(loss)
            ad.adam_step(params, state, config.lr)
            ad.zero_grads(params.values())
            losses.append(value * len(idx))
        dev_acc = accuracy(model, dev, dev_labels)
        history.rows.append((epoch, sum(losses) / len(order), dev_acc))
        log.info("epoch %d loss %.4f dev %.4f", epoch, history.rows[-1][1], dev_acc)
        if dev_acc > best_acc:
            best_acc, best, stale = dev_acc, model.parameter_arrays(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.set_parameters(best)
    history.best_dev_accuracy = best_acc
    return history


def train_classifier(
    kind: ModelKind | str,
    bundle: DatasetBundle,
    config: NeuralConfig | None = None,
    pretrained: EmbeddingTable | None = None,
    train_labels=None,
    dev_labels=None,
) -> tuple[Model, TrainingLog]:
    config = config or NeuralConfig.for_kind(kind)
    with ad.float64_mode(config.float64):
        model = build_model(kind, bundle.train, config, pretrained)
        history = fit(model, bundle.train, bundle.dev, config, train_labels, dev_labels)
    return model, history


def save_model(model: Model, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"kind": model.kind.value, "dtype": str(model.params["embedding"].data.dtype), **model.config()}
    if isinstance(model, FastTextModel):
        (d / "words.txt").write_text("".join(w + "\n" for w in model.words), encoding="utf-8")
    else:
        save_vocab(model.vocab, d / "subword.txt")
    (d / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    ad.save_params(model.parameter_arrays(), d / "params.bin")


def load_model(directory: str | Path) -> Model:
    d = Path(directory)
    meta = json.loads((d / "model.json").read_text(encoding="utf-8"))
    kind = ModelKind(meta["kind"])
    arrays = ad.load_params(d / "params.bin")
    with ad.float64_mode(meta["dtype"] == "float64"):
        if kind is ModelKind.FASTTEXT:
            words = (d / "words.txt").read_text(encoding="utf-8").split("\n")[:-1]
            model = FastTextModel(words, meta["dim"], meta["buckets"], dropout=meta["dropout"])
        elif kind is ModelKind.LSTM:
            vocab = load_vocab(d / "subword.txt")
            model = LstmModel(vocab, meta["dim"], meta["hidden"], max_len=meta["max_len"], dropout=meta["dropout"])
        else:
            vocab = load_vocab(d / "subword.txt")
            model = SimplifiedTransformerModel(vocab, meta["dim"], max_len=meta["max_len"], dropout=meta["dropout"])
    model.set_parameters(arrays)
    return model


def config_dict(config: NeuralConfig) -> dict:
    return asdict(config)

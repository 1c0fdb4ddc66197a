"""Pre-trained word vectors, averaged document vectors and Gaussian documents."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class VecFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dim: int
    vectors: Mapping[str, np.ndarray]
    oov_seed: int = 0
    _oov_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for w, v in self.vectors.items():
            if len(v) != self.dim:
                raise VecFormatError(f"vector for {w!r} has length {len(v)}, expected {self.dim}")

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def oov_vector(self, word: str) -> np.ndarray:
        """Uniform(-0.1, 0.1) vector seeded by a hash of ``(oov_seed, word)``."""
        v = self._oov_cache.get(word)
        if v is None:
            digest = hashlib.sha256(f"{self.oov_seed}\x1f{word}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.uniform(-0.1, 0.1, self.dim)
            v.flags.writeable = False
            self._oov_cache[word] = v
        return v

    def lookup(self, word: str) -> np.ndarray:
        v = self.vectors.get(word)
        if v is None:
            return self.oov_vector(word)
        return np.asarray(v, dtype=np.float64)

    def matrix(self, tokens: Sequence[str]) -> np.ndarray:
        return np.stack([self.lookup(t) for t in tokens])


def load_vec(path: str | Path, oov_seed: int = 0) -> EmbeddingTable:
    """Parse fastText ``.vec`` text: a ``count dim`` header, then ``word v1 .. vdim``."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise VecFormatError("line 1: expected header 'count dim'")
        try:
            dim = int(header[1])
        except ValueError:
            raise VecFormatError("line 1: unparsable dimension") from None
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise VecFormatError(
                    f"line {lineno}: expected {dim} values, got {len(values)}"
                )
            if word in vectors:
                continue
            try:
                vectors[word] = np.array([float(x) for x in values])
            except ValueError:
                raise VecFormatError(f"line {lineno}: unparsable real") from None
    return EmbeddingTable(dim, vectors, oov_seed)


def save_vec(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for word, v in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in v) + "\n")


def doc_mean(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    if len(tokens) == 0:
        raise ValueError("empty paragraph")
    return table.matrix(tokens).mean(axis=0)


@dataclass(frozen=True)
class GaussianDoc:
    mean: np.ndarray
    var: np.ndarray


def gaussian_doc(tokens: Sequence[str], table: EmbeddingTable) -> GaussianDoc:
    """Mean and per-dimension population variance of the token vectors."""
    if len(tokens) == 0:
        raise ValueError("empty paragraph")
    m = table.matrix(tokens)
    mean = m.mean(axis=0)
    var = ((m - mean) ** 2).mean(axis=0)
    return GaussianDoc(mean, var)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def gaussian_similarity(a: GaussianDoc, b: GaussianDoc, alpha: float = 0.5) -> float:
    """``alpha * cos(means) + (1 - alpha) * cos(variances)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch")
    return alpha * _cos(a.mean, b.mean) + (1.0 - alpha) * _cos(a.var, b.var)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def gaussian_kernel(
    rows: Sequence[GaussianDoc], cols: Sequence[GaussianDoc], alpha: float = 0.5
) -> np.ndarray:
    """Similarity matrix between two document lists, vectorized."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    rm = _unit_rows(np.stack([d.mean for d in rows]))
    rv = _unit_rows(np.stack([d.var for d in rows]))
    cm = _unit_rows(np.stack([d.mean for d in cols]))
    cv = _unit_rows(np.stack([d.var for d in cols]))
    k = alpha * np.clip(rm @ cm.T, -1, 1) + (1 - alpha) * np.clip(rv @ cv.T, -1, 1)
    return k


def save_gaussian_docs(docs: Iterable[GaussianDoc], path: str | Path) -> None:
    """CSV with one row per document: ``mean_0..mean_{d-1}, var_0..var_{d-1}``."""
    docs = list(docs)
    dim = len(docs[0].mean) if docs else 0
    header = [f"mean_{i}" for i in range(dim)] + [f"var_{i}" for i in range(dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for d in docs:
            fh.write(",".join(repr(float(x)) for x in np.concatenate([d.mean, d.var])) + "\n")

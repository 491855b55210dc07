"""Word/sentence vector providers used for topic labeling."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import AnnotatedSentence, tokenize


class EmbeddingError(ValueError):
    pass


class EmbeddingSource(enum.Enum):
    EXTERNAL_FILE = "external_file"
    MEAN_OF_WORDS = "mean_of_words"


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    _dim: int | None = None

    @property
    def dimension(self) -> int:
        if self._dim is None:
            raise EmbeddingError("embedding table is empty; dimension undefined")
        return self._dim

    def get(self, token: str) -> np.ndarray | None:
        """Vector for ``token`` or None when absent (never a silent zero)."""
        if self._dim is None:
            raise EmbeddingError("embedding table is empty; dimension undefined")
        return self.vectors.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def add(self, token: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if self._dim is None:
            self._dim = vec.shape[0]
        elif vec.shape != (self._dim,):
            raise EmbeddingError(f"vector for {token!r} has dimension {vec.shape[0]}, expected {self._dim}")
        self.vectors[token] = vec


def load_embedding_table(path: str | Path) -> EmbeddingTable:
    """Read whitespace-separated ``token v1 ... vD`` lines."""
    table = EmbeddingTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric vector entry") from None
            if not values:
                raise EmbeddingError(f"{path}:{lineno}: token without vector")
            if table._dim is not None and len(values) != table._dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: dimension {len(values)} differs from {table._dim}"
                )
            table.add(parts[0], values)
    return table


def write_embedding_table(path: str | Path, table: Mapping[str, Sequence[float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok, vec in table.items():
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def load_sentence_cache(path: str | Path) -> dict[str, np.ndarray]:
    cache = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise EmbeddingError(f"{path}:{lineno}: malformed JSON") from None
            try:
                cache[rec["text"]] = np.asarray(rec["vector"], dtype=np.float64)
            except KeyError:
                raise EmbeddingError(f"{path}:{lineno}: cache record needs text and vector") from None
    return cache


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise EmbeddingError("cannot normalize a zero or non-finite vector")
    return v / norm


def topic_embedding(
    top_words: Sequence[tuple[str, float]], table: EmbeddingTable, n: int = 10
) -> np.ndarray:
    """Unit-norm weighted average of the vectors of a topic's top ``n`` words.

    Weights are renormalized over the words actually present in ``table``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    vecs, weights = [], []
    for tok, w in list(top_words)[:n]:
        vec = table.get(tok)
        if vec is not None:
            vecs.append(vec)
            weights.append(w)
    if not vecs:
        raise EmbeddingError("unlabelable topic: no top word has a vector")
    alpha = np.asarray(weights, dtype=np.float64)
    if alpha.sum() <= 0:
        alpha = np.ones_like(alpha)
    alpha /= alpha.sum()
    return _unit(alpha @ np.vstack(vecs))


@dataclass
class SentenceEmbedding:
    vector: np.ndarray
    source: EmbeddingSource


def sentence_embedding(
    sentence: AnnotatedSentence | str,
    table: EmbeddingTable,
    cache: Mapping[str, np.ndarray] | None = None,
) -> SentenceEmbedding:
    text = sentence.text if isinstance(sentence, AnnotatedSentence) else sentence
    if cache is not None and text in cache:
        return SentenceEmbedding(np.asarray(cache[text], dtype=np.float64), EmbeddingSource.EXTERNAL_FILE)
    vecs = [v for v in (table.get(tok) for tok in tokenize(text)) if v is not None]
    if not vecs:
        raise EmbeddingError(f"no embeddable words in sentence {text!r}")
    return SentenceEmbedding(_unit(np.mean(vecs, axis=0)), EmbeddingSource.MEAN_OF_WORDS)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise EmbeddingError("cosine of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))

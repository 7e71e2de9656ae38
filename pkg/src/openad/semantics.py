"""Label embeddings and the cosine-similarity semantic score."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import UNIT_NORM_TOL


class MissingEmbeddingError(KeyError):
    def __init__(self, labels):
        self.labels = sorted(set(labels))
        super().__init__(f"missing embedding for label(s): {', '.join(map(repr, self.labels))}")


class EmbeddingSpaceError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    space_id: str
    dim: int
    entries: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        entries = {}
        for text, vec in dict(self.entries).items():
            v = np.asarray(vec, dtype=float).reshape(-1)
            if v.shape != (self.dim,):
                raise EmbeddingSpaceError(f"entry {text!r} has dim {v.size}, table dim is {self.dim}")
            norm = np.linalg.norm(v)
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise ValueError(f"entry {text!r} is not unit norm (|v| = {norm:.6g})")
            entries[text] = v
        self.entries = entries

    def __contains__(self, text):
        return text in self.entries

    def __len__(self):
        return len(self.entries)


class TableProvider:
    """Looks labels up in a precomputed table (e.g. exported CLIP text features)."""

    def __init__(self, table: EmbeddingTable):
        self.table = table

    @property
    def space_id(self) -> str:
        return self.table.space_id

    @property
    def dim(self) -> int:
        return self.table.dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("label text must be non-empty")
        try:
            return self.table.entries[text]
        except KeyError:
            raise MissingEmbeddingError([text]) from None


class LexicalProvider:
    """Dependency-free fallback: hashed character trigrams.

    Text is case-folded and padded, each trigram is hashed with a keyed 64-bit
    BLAKE2b into one of ``dim`` buckets, and the counts are L2-normalised.
    Similarities are not calibrated against any learned encoder.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    @property
    def space_id(self) -> str:
        return f"lexical-trigram-{self.dim}-seed{self.seed}"

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("label text must be non-empty")
        padded = f"  {text.casefold()} "
        acc = np.zeros(self.dim)
        for i in range(len(padded) - 2):
            acc[self._bucket(padded[i:i + 3])] += 1.0
        return acc / np.linalg.norm(acc)


def embed(provider, text: str) -> np.ndarray:
    return provider.embed(text)


def semantic_similarity(a, b) -> float:
    """Cosine similarity of two unit vectors (their dot product)."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise EmbeddingSpaceError(f"embedding dims differ: {a.size} vs {b.size}")
    return float(np.clip(a @ b, -1.0, 1.0))


def similarity_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size and b.size and a.shape[1] != b.shape[1]:
        raise EmbeddingSpaceError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.size == 0 or b.size == 0:
        return np.zeros((len(a), len(b)))
    return np.clip(a @ b.T, -1.0, 1.0)

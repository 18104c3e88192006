"""Text embeddings, cosine similarity and the position-adaptive threshold.

The built-in embedder hashes lowercased alphanumeric tokens into 256 buckets
and L2-normalizes the counts. Bucket 0 is reserved: texts without any token
embed to that basis vector. Other embedders (e.g. a sentence-embedding
service) plug in through :class:`RemoteEmbedder` or any object with an
``embed(text) -> Embedding`` method.
"""
from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol, runtime_checkable

import httpx
import numpy as np

from .domain import SimilarityScore

DEFAULT_DIM = 256
DEFAULT_SIMILARITY_THRESHOLD = 0.7
# slack for float noise at threshold boundaries (comparisons are inclusive)
BOUNDARY_EPS = 1e-9

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=float)
        if vec.ndim != 1 or vec.size == 0:
            raise EmbeddingError("embedding must be a non-empty 1-d vector")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.size)


@runtime_checkable
class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> Embedding: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=65536)
def token_bucket(token: str, dim: int = DEFAULT_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(digest, "big") % (dim - 1)


class HashedEmbedder:
    """Deterministic hashed bag-of-tokens embedder."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 2:
            raise ValueError("dim must be >= 2 (bucket 0 is reserved)")
        self.dim = dim
        self._counts = lru_cache(maxsize=32768)(self._bucket_counts)

    def _bucket_counts(self, text: str) -> tuple[tuple[int, int], ...]:
        counts = Counter(token_bucket(t, self.dim) for t in tokenize(text))
        if not counts:
            counts = Counter({0: 1})
        return tuple(sorted(counts.items()))

    def buckets(self, text: str) -> dict[int, int]:
        if not text:
            raise EmbeddingError("empty input")
        return dict(self._counts(text))

    def embed(self, text: str) -> Embedding:
        vec = np.zeros(self.dim)
        for b, c in self.buckets(text).items():
            vec[b] = c
        return Embedding(vec / np.linalg.norm(vec))

    def similarity(self, a: str, b: str) -> float:
        # same value as cosine(embed(a), embed(b)), computed on integer counts
        ca, cb = self.buckets(a), self.buckets(b)
        if len(ca) > len(cb):
            ca, cb = cb, ca
        dot = sum(c * cb.get(k, 0) for k, c in ca.items())
        if dot <= 0:
            return 0.0
        na = sum(c * c for c in ca.values())
        nb = sum(c * c for c in cb.values())
        return min(1.0, dot / math.sqrt(na * nb))


class RemoteEmbedder:
    """Embedder backed by an HTTP endpoint returning a JSON array of reals.

    The endpoint receives ``POST {"text": ...}``.
    """

    def __init__(self, url: str, dim: int, client: Optional[httpx.Client] = None, timeout: float = 10.0):
        self.url = url
        self.dim = dim
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, text: str) -> Embedding:
        if not text:
            raise EmbeddingError("empty input")
        resp = self._client.post(self.url, json={"text": text})
        resp.raise_for_status()
        values = resp.json()
        if not isinstance(values, list) or len(values) != self.dim:
            raise EmbeddingError(f"remote embedder returned {type(values).__name__}, expected {self.dim} reals")
        vec = np.asarray(values, dtype=float)
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec = np.zeros(self.dim)
            vec[0] = 1.0
            norm = 1.0
        return Embedding(vec / norm)


DEFAULT_EMBEDDER = HashedEmbedder()


def embed(text: str, embedder: Optional[Embedder] = None) -> Embedding:
    return (embedder or DEFAULT_EMBEDDER).embed(text)


def cosine(a: Embedding, b: Embedding) -> SimilarityScore:
    """Cosine similarity clamped to [0, 1]."""
    if a.dim != b.dim:
        raise EmbeddingError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.vector))
    nb = float(np.linalg.norm(b.vector))
    if na == 0 or nb == 0:
        return 0.0
    value = float(np.dot(a.vector, b.vector)) / (na * nb)
    return min(1.0, max(0.0, value))


def text_similarity(a: str, b: str, embedder: Optional[Embedder] = None) -> SimilarityScore:
    embedder = embedder or DEFAULT_EMBEDDER
    fast = getattr(embedder, "similarity", None)
    if fast is not None:
        return fast(a, b)
    return cosine(embedder.embed(a), embedder.embed(b))


def is_similar(a: str, b: str, threshold: float, embedder: Optional[Embedder] = None) -> bool:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return text_similarity(a, b, embedder) >= threshold - BOUNDARY_EPS


def passes(score: float, threshold: float) -> bool:
    return score >= threshold - BOUNDARY_EPS


@dataclass(frozen=True)
class ThresholdSchedule:
    """Similarity threshold that tightens linearly with the subtask's position.

    ``threshold_at(seq_id) = base + min(seq_id, cap_id) * step``; with the
    defaults it saturates at ``flat_default`` (0.7) from the fifth subtask on.
    """

    base: float = 0.6
    step: float = 0.02
    cap_id: int = 5
    flat_default: float = DEFAULT_SIMILARITY_THRESHOLD

    def __post_init__(self) -> None:
        if not 0 < self.base <= self.flat_default <= 1:
            raise ValueError("need 0 < base <= flat_default <= 1")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if self.cap_id < 0:
            raise ValueError("cap_id must be >= 0")

    def threshold_at(self, seq_id: int) -> float:
        if seq_id < 1:
            raise ValueError(f"seq_id must be >= 1, got {seq_id}")
        return self.base + min(seq_id, self.cap_id) * self.step

    @property
    def ceiling(self) -> float:
        return self.base + self.cap_id * self.step

    @classmethod
    def saturating_at(cls, ceiling: float, step: float = 0.02, cap_id: int = 5) -> "ThresholdSchedule":
        """Schedule with the default slope whose plateau equals ``ceiling``."""
        base = ceiling - cap_id * step
        if base <= 0:
            base, step = ceiling, 0.0
        return cls(base=base, step=step, cap_id=cap_id, flat_default=max(ceiling, base))


def threshold_at(schedule: ThresholdSchedule, seq_id: int) -> float:
    return schedule.threshold_at(seq_id)

"""Text embeddings: a deterministic signed feature-hashing embedder and an HTTP client.

The hashing embedder maps every unigram and bigram of the normalized text to
a bucket of a ``dimension``-length vector using keyed BLAKE2b (64-bit digest).
The top bit of the digest picks the sign. Vectors are L2-normalized; text
without tokens embeds to the zero vector.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.request
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .corpus import normalize_text, tokenize

DEFAULT_DIMENSION = 256
DEFAULT_SEED = 0x1E86_2A9F
EMBED_URL_ENV = "LEXGRAPH_EMBED_URL"

_HIGH_BIT = 1 << 63


class EmbeddingError(ValueError):
    pass


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def _features(text: str) -> list[str]:
    tokens = tokenize(normalize_text(text))
    feats = ["u:" + t for t in tokens]
    feats.extend(f"b:{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return feats


class HashingEmbedder:
    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = DEFAULT_SEED):
        if dimension < 1:
            raise EmbeddingError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)
        self.embed = lru_cache(maxsize=65536)(self._embed)

    def feature_hash(self, feature: str) -> int:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "big")

    def _embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for feat in _features(text):
            h = self.feature_hash(feat)
            vec[h % self.dimension] += -1.0 if h & _HIGH_BIT else 1.0
        norm = np.linalg.norm(vec)
        if norm > 0.0:
            vec /= norm
        vec.setflags(write=False)
        return vec

    def __repr__(self) -> str:
        return f"HashingEmbedder(dimension={self.dimension}, seed={self.seed:#x})"


class HttpEmbedder:
    """Client for an external embedding service.

    POSTs ``{"texts": [...]}`` and expects ``{"vectors": [[...], ...], "dimension": D}``.
    Returned vectors are checked against ``D`` and re-normalized.
    """

    def __init__(self, url: str, dimension: int | None = None, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout
        self.dimension = dimension
        self._cache: dict[str, np.ndarray] = {}

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            for text, vec in zip(missing, self._request(missing)):
                self._cache[text] = vec
        return [self._cache[t] for t in texts]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def _request(self, texts: list[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": texts}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        try:
            dim = int(payload["dimension"])
            raw = payload["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"malformed embedder response: {exc}") from None
        if self.dimension is None:
            self.dimension = dim
        if dim != self.dimension:
            raise EmbeddingError(f"embedder returned dimension {dim}, expected {self.dimension}")
        if len(raw) != len(texts):
            raise EmbeddingError(f"embedder returned {len(raw)} vectors for {len(texts)} texts")
        out = []
        for values in raw:
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (dim,) or not np.all(np.isfinite(vec)):
                raise EmbeddingError("embedder returned a vector of the wrong shape or non-finite values")
            norm = np.linalg.norm(vec)
            if norm > 0.0:
                vec = vec / norm
            vec.setflags(write=False)
            out.append(vec)
        return out


@lru_cache(maxsize=None)
def default_embedder() -> HashingEmbedder:
    return HashingEmbedder()


def get_embedder(url: str | None = None) -> Embedder:
    """Embedder for ``url``, else ``$LEXGRAPH_EMBED_URL``, else the hashing embedder."""
    url = url or os.environ.get(EMBED_URL_ENV)
    if url:
        return HttpEmbedder(url)
    return default_embedder()


def embed_text(text: str) -> np.ndarray:
    return default_embedder().embed(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clipped to [-1, 1]; 0 when either vector is zero."""
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b)) / denom))

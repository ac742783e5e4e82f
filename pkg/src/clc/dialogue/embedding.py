"""Semantic text vectors used for repeat detection and n-best hypotheses.

No pretrained language model is bundled. ``HashingTextEmbedder`` is a
deterministic bag-of-words stand-in (identical normalized text gives an
identical vector); ``EmbeddingTable`` serves vectors supplied by the user.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Mapping, Protocol

import numpy as np

from ..errors import MissingEmbedding, ParseError
from ..metrics import normalize_text, tokenize


class TextEmbedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


class HashingTextEmbedder:
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise MissingEmbedding(f"cannot embed empty text {text!r}")
        vec = np.zeros(self.dim)
        for tok in tokens:
            if tok not in self._cache:
                self._cache[tok] = _token_vector(tok, self.dim)
            vec += self._cache[tok]
        return vec / np.linalg.norm(vec)


class EmbeddingTable:
    """Lookup by normalized text, optionally falling back to another embedder."""

    def __init__(self, vectors: Mapping[str, np.ndarray], fallback: TextEmbedder | None = None):
        self.vectors = {normalize_text(k): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise ParseError(f"embedding table mixes dimensions {sorted(dims)}")
        self.dim = dims.pop()[0] if dims else (fallback.dim if fallback else 0)
        if fallback is not None and fallback.dim != self.dim:
            raise ParseError("fallback embedder dimension differs from the table")
        self.fallback = fallback

    def __call__(self, text: str) -> np.ndarray:
        key = normalize_text(text)
        if key in self.vectors:
            return self.vectors[key]
        if self.fallback is None:
            raise MissingEmbedding(f"no embedding for {text!r}")
        return self.fallback(text)

    @classmethod
    def load(cls, path: str | os.PathLike, fallback: TextEmbedder | None = None) -> "EmbeddingTable":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ParseError(f"{path}: expected an object mapping text to vectors")
        return cls(data, fallback)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))

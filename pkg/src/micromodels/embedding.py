"""Sentence embedding providers.

Every provider returns unit-L2 vectors, so cosine similarity is a dot product.
:class:`FallbackEmbedder` is a deterministic hashed character-trigram model used
offline; :class:`RemoteEmbedder` talks to an HTTP service hosting a real encoder.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import tokenize
from .exceptions import ProviderError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

FALLBACK_DIM = 1024
BOUNDARY = "#"

REMOTE_ENDPOINT_ENV = "MICROMODELS_EMBED_ENDPOINT"


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


@lru_cache(maxsize=65536)
def _bucket(gram: str, dim: int) -> int:
    return fnv1a_64(gram.encode("utf-8")) % dim


class EmbeddingProvider:
    """Base class: subclasses set ``dim`` and implement :meth:`embed_many`."""

    dim: int

    @property
    def fingerprint(self) -> str:
        raise NotImplementedError

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


def _l2_normalize_rows(mat):
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / norms


class FallbackEmbedder(EmbeddingProvider):
    """Hashed character-trigram counts, L2-normalized.

    The text is tokenized, re-joined with single spaces and wrapped in
    ``BOUNDARY`` on both sides. Each trigram increments bucket
    ``fnv1a_64(gram) % dim``. Texts without any trigram map to ``e_0``.
    """

    def __init__(self, dim: int = FALLBACK_DIM):
        self.dim = dim

    @property
    def fingerprint(self) -> str:
        return f"fallback-fnv1a64-char3-{self.dim}"

    def embed(self, text: str) -> np.ndarray:
        return np.array(self._embed_cached(text))

    @lru_cache(maxsize=32768)
    def _embed_cached(self, text):
        padded = BOUNDARY + " ".join(tokenize(text)) + BOUNDARY
        vec = np.zeros(self.dim)
        for i in range(len(padded) - 2):
            vec[_bucket(padded[i : i + 3], self.dim)] += 1.0
        norm = np.sqrt(vec @ vec)
        if norm == 0.0:
            vec[0] = 1.0
        else:
            vec /= norm
        vec.flags.writeable = False
        return vec

    def embed_many(self, texts):
        if len(texts) == 0:
            return np.zeros((0, self.dim))
        return np.vstack([self._embed_cached(t) for t in texts])


class RemoteEmbedder(EmbeddingProvider):
    """Client for ``POST {"texts": [...]} -> {"dim": d, "vectors": [...]}``.

    Batches are sent concurrently (``max_workers``); results are reassembled
    in request order. Returned vectors are renormalized to unit length.
    """

    def __init__(self, endpoint=None, dim=None, timeout=30.0, batch_size=64, max_workers=4):
        endpoint = os.environ.get(REMOTE_ENDPOINT_ENV) or endpoint
        if not endpoint:
            raise ProviderError("no remote embedding endpoint configured")
        self.endpoint = endpoint
        self.dim = dim
        self.timeout = timeout
        self.batch_size = batch_size
        self.max_workers = max_workers

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.endpoint}:{self.dim}"

    def _post(self, batch_index, texts):
        body = json.dumps({"texts": list(texts)}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise ProviderError(
                f"embedding server returned status {exc.code}", batch_index=batch_index
            ) from exc
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderError(
                f"embedding request failed: {exc}", batch_index=batch_index
            ) from exc
        return self._validate(batch_index, texts, payload)

    def _validate(self, batch_index, texts, payload):
        try:
            dim = int(payload["dim"])
            vectors = payload["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError("malformed embedding response", batch_index=batch_index) from exc
        expected = self.dim if self.dim is not None else dim
        if dim != expected:
            raise ProviderError(
                f"server dimension {dim} != expected {expected}", batch_index=batch_index
            )
        if len(vectors) != len(texts):
            raise ProviderError(
                f"expected {len(texts)} vectors, got {len(vectors)}", batch_index=batch_index
            )
        for i, v in enumerate(vectors):
            if len(v) != expected:
                raise ProviderError(
                    f"vector {i} has length {len(v)}, expected {expected}",
                    batch_index=batch_index,
                    item_index=i,
                )
        mat = np.asarray(vectors, dtype=float).reshape(len(vectors), expected)
        norms = np.linalg.norm(mat, axis=1)
        bad = np.flatnonzero(~np.isfinite(norms) | (norms == 0))
        if bad.size:
            raise ProviderError(
                "zero or non-finite vector", batch_index=batch_index, item_index=int(bad[0])
            )
        return dim, _l2_normalize_rows(mat)

    def embed_many(self, texts):
        texts = list(texts)
        if not texts:
            raise ProviderError("empty batch")
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            results = list(pool.map(self._post, range(len(batches)), batches))
        if self.dim is None:
            self.dim = results[0][0]
        return np.vstack([mat for _, mat in results])


def make_provider(config: dict | None) -> EmbeddingProvider:
    """Build a provider from ``{"kind": "fallback"}`` or ``{"kind": "remote", ...}``."""
    config = dict(config or {"kind": "fallback"})
    kind = config.pop("kind", "fallback")
    if kind == "fallback":
        return FallbackEmbedder(**config)
    if kind == "remote":
        return RemoteEmbedder(**config)
    raise ProviderError(f"unknown provider kind {kind!r}")

"""Deterministic offline backends for tests and ``--mock`` runs."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from .core import BackendError, ChatRequest


class MockKeyError(BackendError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class MockChatBackend:
    """Scripted chat backend: a pure map from request key to response text.

    Keys are ``"{stage}::{label}"`` or ``"{stage}::{digest}"`` (see
    :meth:`ChatRequest.mock_keys`). Unscripted requests go to ``fallback`` if
    one is given, otherwise they raise :class:`MockKeyError`.
    """

    def __init__(
        self,
        script: Optional[Mapping[str, str]] = None,
        fallback: Optional[Callable[[ChatRequest], str]] = None,
    ):
        self.script = dict(script or {})
        self.fallback = fallback
        self.requests: List[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike, fallback=None) -> "MockChatBackend":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f), fallback=fallback)

    def complete(self, req: ChatRequest) -> tuple[str, bool]:
        self.requests.append(req)
        keys = req.mock_keys()
        for k in keys:
            if k in self.script:
                return self.script[k], False
        if self.fallback is not None:
            return self.fallback(req), False
        raise MockKeyError(f"no scripted response for key {keys[0]!r}")


_WORD = re.compile(r"\w+", re.UNICODE)


def _bucket(feature: str, dim: int) -> tuple[int, float]:
    h = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    n = int.from_bytes(h, "little")
    return n % dim, (1.0 if (n >> 63) & 1 else -1.0)


class HashEmbedder:
    """Signed feature-hashing embedder over words and character trigrams.

    Stable across processes (blake2b, not ``hash()``), unit-normalized, and
    never all-zero for non-empty input.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def vector(self, text: str) -> List[float]:
        vec = [0.0] * self.dim
        words = [w.lower() for w in _WORD.findall(text)]
        features: Dict[str, float] = {}
        for w in words:
            features["w:" + w] = features.get("w:" + w, 0.0) + 1.0
            padded = f"^{w}$"
            for i in range(len(padded) - 2):
                g = "g:" + padded[i : i + 3]
                features[g] = features.get(g, 0.0) + 0.5
        if not features:
            for ch in text.strip():
                features["c:" + ch] = features.get("c:" + ch, 0.0) + 1.0
        for feat, weight in sorted(features.items()):
            idx, sign = _bucket(feat, self.dim)
            vec[idx] += sign * weight
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return [v / norm for v in vec]

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        return [self.vector(t) for t in texts]

from __future__ import annotations

import logging
import math
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Protocol, Sequence, TypeVar

from .._io import digest

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class BackendError(Exception):
    """A backend call failed for good (non-retryable, or retries exhausted)."""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class TransientBackendError(BackendError):
    """Retryable failure: rate limiting, 5xx, dropped connection."""


class EmbeddingInputError(ValueError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    max_tokens: int = 512
    temperature: float = 0.0
    model_tag: str = ""
    # stage and label scope mock-script keys; context is ignored by live
    # backends and excluded from the request digest
    stage: str = "chat"
    label: Optional[str] = None
    context: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be > 0, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")

    @property
    def digest(self) -> str:
        return digest(self.system + "\x00" + self.user)

    def mock_keys(self) -> List[str]:
        keys = []
        if self.label is not None:
            keys.append(f"{self.stage}::{self.label}")
        keys.append(f"{self.stage}::{self.digest}")
        return keys


class Completion(str):
    """Completion text; a ``str`` that also carries call metadata."""

    truncated: bool
    retries: int

    def __new__(cls, text: str, truncated: bool = False, retries: int = 0):
        obj = super().__new__(cls, text)
        obj.truncated = truncated
        obj.retries = retries
        return obj


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> tuple[str, bool]:
        """Return ``(text, truncated)`` or raise a BackendError."""


class EmbeddingBackend(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> List[Sequence[float]]: ...


class Gateway:
    """Shared entry point for chat and embedding calls.

    Retries transient failures with exponential backoff and caps the number of
    in-flight backend requests with a semaphore. ``stats`` counts calls per
    stage so pipeline stages can report what they spent.
    """

    def __init__(
        self,
        chat_backend: Optional[ChatBackend] = None,
        embed_backend: Optional[EmbeddingBackend] = None,
        *,
        concurrency: int = 4,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        backoff_max: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
        chat_model: str = "",
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.concurrency = concurrency
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_max = backoff_max
        self.chat_model = chat_model
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(concurrency)
        self._lock = threading.Lock()
        self.stats: Counter = Counter()

    def _count(self, key: str, n: int = 1) -> None:
        with self._lock:
            self.stats[key] += n

    def chat(self, req: ChatRequest) -> Completion:
        if self.chat_backend is None:
            raise BackendError("no chat backend configured")
        if not req.model_tag and self.chat_model:
            req = ChatRequest(
                req.system, req.user, req.max_tokens, req.temperature, self.chat_model,
                req.stage, req.label, req.context,
            )
        retries = 0
        while True:
            try:
                with self._sem:
                    text, truncated = self.chat_backend.complete(req)
            except TransientBackendError as exc:
                if retries >= self.max_retries:
                    self._count("chat_failures")
                    raise BackendError(
                        f"{req.stage}: giving up after {retries} retries: {exc}", status=exc.status
                    ) from exc
                delay = min(self.backoff_max, self.backoff_base * (2 ** retries))
                retries += 1
                self._count("retries")
                logger.debug("transient failure (%s); retry %d in %.2fs", exc.status, retries, delay)
                self._sleep(delay)
                continue
            except BackendError:
                self._count("chat_failures")
                raise
            break
        self._count("chat_calls")
        self._count(f"chat:{req.stage}")
        if truncated:
            self._count("truncated")
        return Completion(text, truncated=truncated, retries=retries)

    def embed(self, texts: Sequence[str], stage: str = "embed") -> List[EmbeddingVector]:
        texts = list(texts)
        if not texts:
            raise EmbeddingInputError("embed() needs a non-empty batch")
        for i, t in enumerate(texts):
            if not isinstance(t, str) or not t.strip():
                raise EmbeddingInputError(f"text {i} in embedding batch is empty")
        if self.embed_backend is None:
            raise BackendError("no embedding backend configured")
        retries = 0
        while True:
            try:
                with self._sem:
                    rows = self.embed_backend.embed(texts)
            except TransientBackendError as exc:
                if retries >= self.max_retries:
                    raise BackendError(f"embed: giving up after {retries} retries", exc.status) from exc
                self._sleep(min(self.backoff_max, self.backoff_base * (2 ** retries)))
                retries += 1
                self._count("retries")
                continue
            break
        if len(rows) != len(texts):
            raise BackendError(f"embedding backend returned {len(rows)} vectors for {len(texts)} texts")
        self._count("embed_calls")
        self._count(f"embed:{stage}", len(texts))
        return [EmbeddingVector(r) for r in rows]

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply ``fn`` concurrently; results come back in input order."""
        items = list(items)
        if self.concurrency == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(fn, items))

"""Chat and embedding access: retries, concurrency cap, templates, mocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .core import (
    BackendError,
    ChatRequest,
    Completion,
    EmbeddingInputError,
    EmbeddingVector,
    Gateway,
    TransientBackendError,
)
from .mock import HashEmbedder, MockChatBackend, MockKeyError
from .prompts import PromptTemplate, RenderError, load_template, render


@dataclass
class GatewayConfig:
    kind: str = "mock"  # "live" | "mock"
    base_url: str = "https://api.openai.com/v1"
    embed_base_url: Optional[str] = None
    chat_model: str = "gpt-4o-mini"
    answer_model: Optional[str] = None
    embed_model: str = "sentence-transformers/paraphrase-MiniLM-L6-v2"
    api_key_env: str = "OPENAI_API_KEY"
    concurrency: int = 4
    max_retries: int = 5
    backoff_base: float = 0.5
    timeout: float = 60.0
    mock_script: Optional[str] = None
    mock_embed_dim: int = 256

    def model_identity(self) -> dict:
        """The fields that change model outputs (used in config digests)."""
        if self.kind == "mock":
            return {"kind": "mock", "embed_dim": self.mock_embed_dim, "script": self.mock_script}
        return {
            "kind": "live",
            "chat_model": self.chat_model,
            "answer_model": self.answer_model or self.chat_model,
            "embed_model": self.embed_model,
        }


def build_gateway(
    cfg: GatewayConfig,
    fallback: Optional[Callable[[ChatRequest], str]] = None,
    model: Optional[str] = None,
) -> Gateway:
    """Construct a :class:`Gateway` from config.

    ``fallback`` only applies to the mock kind: it answers requests the
    mock script does not cover.
    """
    if cfg.kind == "mock":
        if cfg.mock_script:
            chat = MockChatBackend.from_file(cfg.mock_script, fallback=fallback)
        else:
            chat = MockChatBackend(fallback=fallback)
        embed = HashEmbedder(cfg.mock_embed_dim)
        chat_model = "mock"
    elif cfg.kind == "live":
        from .http import HttpChatBackend, HttpEmbeddingBackend

        chat_model = model or cfg.chat_model
        chat = HttpChatBackend(
            cfg.base_url, chat_model, api_key_env=cfg.api_key_env, timeout=cfg.timeout
        )
        embed = HttpEmbeddingBackend(
            cfg.embed_base_url or cfg.base_url, cfg.embed_model,
            api_key_env=cfg.api_key_env, timeout=cfg.timeout,
        )
    else:
        raise ValueError(f"unknown backend kind {cfg.kind!r} (expected 'live' or 'mock')")
    return Gateway(
        chat, embed,
        concurrency=cfg.concurrency,
        max_retries=cfg.max_retries,
        backoff_base=cfg.backoff_base,
        chat_model=chat_model,
    )


__all__ = [
    "BackendError",
    "ChatRequest",
    "Completion",
    "EmbeddingInputError",
    "EmbeddingVector",
    "Gateway",
    "GatewayConfig",
    "HashEmbedder",
    "MockChatBackend",
    "MockKeyError",
    "PromptTemplate",
    "RenderError",
    "TransientBackendError",
    "build_gateway",
    "load_template",
    "render",
]

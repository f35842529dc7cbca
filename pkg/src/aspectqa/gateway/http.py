"""HTTP backends speaking the common chat-completions / embeddings JSON shape."""

from __future__ import annotations

import os
from typing import List, Optional, Sequence

import httpx

from .core import BackendError, ChatRequest, TransientBackendError

RETRYABLE_STATUS = {408, 409, 429}


def _is_retryable(status: int) -> bool:
    return status in RETRYABLE_STATUS or 500 <= status < 600


class _HttpBase:
    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/") + "/", headers=headers, timeout=timeout, transport=transport
        )

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        if resp.status_code >= 400:
            msg = f"HTTP {resp.status_code} from {path}: {resp.text[:300]}"
            if _is_retryable(resp.status_code):
                raise TransientBackendError(msg, status=resp.status_code)
            raise BackendError(msg, status=resp.status_code)
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"non-JSON body from {path}", status=resp.status_code) from exc

    def close(self) -> None:
        self._client.close()


class HttpChatBackend(_HttpBase):
    def __init__(self, base_url: str, model: str, **kwargs):
        super().__init__(base_url, **kwargs)
        self.model = model

    def complete(self, req: ChatRequest) -> tuple[str, bool]:
        payload = {
            "model": req.model_tag or self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        data = self._post("chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {str(data)[:300]}") from exc
        return text, choice.get("finish_reason") == "length"


class HttpEmbeddingBackend(_HttpBase):
    def __init__(self, base_url: str, model: str, dim: Optional[int] = None, **kwargs):
        super().__init__(base_url, **kwargs)
        self.model = model
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        data = self._post("embeddings", {"model": self.model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            vectors = [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embeddings response: {str(data)[:300]}") from exc
        dims = {len(v) for v in vectors}
        if len(dims) > 1 or (self.dim is not None and dims != {self.dim}):
            raise BackendError(f"inconsistent embedding dims {sorted(dims)}")
        if self.dim is None and vectors:
            self.dim = len(vectors[0])
        return vectors

"""OpenAI-compatible HTTP backend.

Hosted GPT, Claude and Gemini models are all reachable through the
``/chat/completions`` wire format (natively or via a gateway), so one client
covers generation, judging and embedding.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence

import httpx
import numpy as np

from nuggetgen.provider.base import AuthError, GenerationRequest, Provider, ProviderError, TransportError


class HttpProvider(Provider):
    def __init__(
        self,
        model_tag: str,
        base_url: str,
        api_key_env: Optional[str] = None,
        embedding_model: Optional[str] = None,
        timeout: float = 120.0,
        transport: Optional[httpx.BaseTransport] = None,
        **kwargs,
    ):
        super().__init__(model_tag, **kwargs)
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.embedding_model = embedding_model
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise AuthError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self._client.post(f"{self.base_url}{path}", json=body, headers=self._headers())
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"{resp.status_code} from {self.base_url}: {resp.text[:200]}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{resp.status_code} from {self.base_url}")
        if resp.status_code >= 400:
            raise ProviderError(f"{resp.status_code} from {self.base_url}: {resp.text[:200]}")
        return resp.json()

    def _complete(self, request: GenerationRequest) -> tuple[str, bool]:
        data = self._post(
            "/chat/completions",
            {
                "model": request.model_tag,
                "messages": [{"role": "user", "content": request.prompt}],
                "max_tokens": request.max_output_tokens,
                "temperature": request.temperature,
            },
        )
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected completion payload: {data!r:.200}") from exc
        return text, choice.get("finish_reason") == "length"

    def _embed(self, texts: Sequence[str]) -> np.ndarray:
        data = self._post("/embeddings", {"model": self.embedding_model or self.model_tag, "input": list(texts)})
        rows = sorted(data["data"], key=lambda d: d["index"])
        return np.array([r["embedding"] for r in rows], dtype=float)


class HttpPairwiseScorer:
    """Client for a served sequence-pair relevance model.

    Wire format: POST ``{base_url}/pairwise`` with
    ``{"query", "text_a", "text_b"}``; the reply is ``{"score": p}`` where p
    is the probability that ``text_a`` is more relevant than ``text_b``.
    """

    def __init__(self, base_url: str, api_key_env: Optional[str] = None, timeout: float = 60.0, **kwargs):
        self._provider = HttpProvider("pairwise", base_url, api_key_env, timeout=timeout, **kwargs)

    def __call__(self, query: str, text_a: str, text_b: str) -> float:
        data = self._provider._with_retries(
            lambda: self._provider._post("/pairwise", {"query": query, "text_a": text_a, "text_b": text_b})
        )
        return float(data["score"])

from __future__ import annotations

import logging
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from nuggetgen.provider.cache import CacheKey, DiskCache

logger = logging.getLogger(__name__)

PURPOSES = ("detect", "summarize", "rewrite", "baseline", "judge_create", "judge_assign")


class ProviderError(Exception):
    """Base class for model-service failures."""


class TransportError(ProviderError):
    """Network or server-side failure; retried with backoff."""


class AuthError(ProviderError):
    """Credentials missing or rejected; never retried."""


class DimensionMismatch(ProviderError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    purpose: str
    max_output_tokens: int = 512
    temperature: float = 0.0
    model_tag: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    model_tag: str
    cached: bool = False
    truncated: bool = False


class Provider(ABC):
    """Common front for generation and embedding backends.

    Subclasses implement :meth:`_complete` (and :meth:`_embed` if they can
    embed). This class owns caching, retries and the in-flight limit.
    """

    def __init__(
        self,
        model_tag: str,
        cache: Optional[DiskCache] = None,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 8,
    ):
        self.model_tag = model_tag
        self.cache = cache
        self.max_retries = max_retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @abstractmethod
    def _complete(self, request: GenerationRequest) -> tuple[str, bool]:
        """Return ``(text, truncated)`` for one uncached request."""

    def _embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} cannot embed")

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if not request.model_tag:
            request = GenerationRequest(
                request.prompt, request.purpose, request.max_output_tokens,
                request.temperature, self.model_tag,
            )
        key = CacheKey.for_request(request)
        use_cache = self.cache is not None and request.temperature == 0
        if use_cache:
            hit = self.cache.get(key)
            if hit is not None:
                return GenerationResult(hit.text, hit.model_tag, cached=True, truncated=hit.truncated)
        text, truncated = self._with_retries(lambda: self._complete(request))
        result = GenerationResult(text, self.model_tag, cached=False, truncated=truncated)
        if use_cache:
            result = self.cache.put(key, result)
        return result

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """One row per input text, order preserved."""
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise ValueError("embed needs a non-empty list of non-empty texts")
        vectors = np.asarray(self._with_retries(lambda: self._embed(texts)), dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(texts) or vectors.shape[1] == 0:
            raise DimensionMismatch(f"backend returned shape {vectors.shape} for {len(texts)} texts")
        if not np.all(np.isfinite(vectors)):
            raise DimensionMismatch("backend returned non-finite embedding values")
        return vectors

    def _with_retries(self, call):
        attempt = 0
        while True:
            try:
                with self._slots:
                    return call()
            except TransportError as exc:
                if attempt >= self.max_retries:
                    raise
                delay = self.backoff * 2**attempt
                logger.warning("transient failure from %s (%s); retry in %.1fs", self.model_tag, exc, delay)
                time.sleep(delay)
                attempt += 1

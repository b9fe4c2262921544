"""Scripted provider for offline runs and tests."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from nuggetgen.provider.base import DimensionMismatch, GenerationRequest, Provider, ProviderError, TransportError

_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class ScriptRule:
    match_substring: str
    response_text: str = ""
    purpose: Optional[str] = None
    # "transport" makes the rule raise instead of answering
    error: Optional[str] = None

    def matches(self, request: GenerationRequest) -> bool:
        if self.purpose is not None and self.purpose != request.purpose:
            return False
        return self.match_substring in request.prompt


class NoScriptedResponse(ProviderError):
    pass


def load_script(path: str | Path) -> list[ScriptRule]:
    """Read a JSON list of ``{match_substring, response_text}`` objects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: mock script must be a JSON list")
    rules = []
    for i, item in enumerate(data):
        try:
            rules.append(ScriptRule(**item))
        except TypeError as exc:
            raise ValueError(f"{path}: bad rule #{i}: {exc}") from None
    return rules


def hashing_embedding(text: str, dim: int = 256) -> np.ndarray:
    """Signed feature hashing of word unigrams and character trigrams, L2-normalized."""
    vec = np.zeros(dim)
    lowered = text.lower()
    features = ["w:" + t for t in _TOKEN.findall(lowered)]
    padded = f"  {lowered}  "
    features += ["c:" + padded[i : i + 3] for i in range(len(padded) - 2)]
    for feat in features:
        h = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "little") % dim
        sign = 1.0 if h[4] & 1 else -1.0
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class ScriptedProvider(Provider):
    """Answers from an ordered rule list; the first matching rule wins.

    ``embeddings`` pins vectors for exact texts; every other text gets the
    hashing embedding, so results never depend on process state.
    """

    def __init__(
        self,
        rules: Sequence[ScriptRule] = (),
        model_tag: str = "mock",
        embeddings: Optional[Mapping[str, Sequence[float]]] = None,
        dim: int = 256,
        **kwargs,
    ):
        kwargs.setdefault("backoff", 0.0)
        kwargs.setdefault("max_retries", 0)
        super().__init__(model_tag, **kwargs)
        self.rules = list(rules)
        self.embeddings = {k: np.asarray(v, dtype=float) for k, v in (embeddings or {}).items()}
        self.dim = dim
        self.calls: list[GenerationRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ScriptedProvider":
        return cls(load_script(path), **kwargs)

    def _complete(self, request: GenerationRequest) -> tuple[str, bool]:
        self.calls.append(request)
        for rule in self.rules:
            if rule.matches(request):
                if rule.error == "transport":
                    raise TransportError(f"scripted transport failure for {rule.match_substring!r}")
                if rule.error:
                    raise ProviderError(f"scripted failure for {rule.match_substring!r}")
                return rule.response_text, False
        raise NoScriptedResponse(f"no rule matches {request.purpose} prompt")

    def _embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for t in texts:
            rows.append(self.embeddings[t] if t in self.embeddings else hashing_embedding(t, self.dim))
        if len({r.shape for r in rows}) != 1:
            raise DimensionMismatch(f"mixed embedding shapes {sorted({r.shape for r in rows})}")
        return np.vstack(rows)

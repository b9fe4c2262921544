"""Content-addressed response cache, one JSON file per request."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from nuggetgen.provider.base import GenerationRequest, GenerationResult


@dataclass(frozen=True)
class CacheKey:
    purpose: str
    digest: str

    @classmethod
    def for_request(cls, request: "GenerationRequest") -> "CacheKey":
        payload = json.dumps(
            [request.model_tag, request.prompt, request.max_output_tokens, float(request.temperature)],
            ensure_ascii=False,
        )
        return cls(request.purpose, hashlib.sha256(payload.encode("utf-8")).hexdigest())


class DiskCache:
    """Layout: ``<root>/<purpose>/<digest>.json``.

    Writes go to a temp file in the same directory and are published with a
    hard link, so the first writer wins and readers never see partial files.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path_for(self, key: CacheKey) -> Path:
        return self.root / key.purpose / f"{key.digest}.json"

    def get(self, key: CacheKey) -> Optional["GenerationResult"]:
        from nuggetgen.provider.base import GenerationResult

        try:
            data = json.loads(self.path_for(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return GenerationResult(data["text"], data["model_tag"], cached=True, truncated=data.get("truncated", False))

    def put(self, key: CacheKey, value: "GenerationResult") -> "GenerationResult":
        """Store ``value`` unless another writer got there first; return the stored value."""
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = json.dumps(
            {"text": value.text, "model_tag": value.model_tag, "truncated": value.truncated},
            ensure_ascii=False, sort_keys=True,
        )
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(body)
            try:
                os.link(tmp, path)
            except FileExistsError:
                stored = self.get(key)
                return stored if stored is not None else value
        finally:
            os.unlink(tmp)
        return value

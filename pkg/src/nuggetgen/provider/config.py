"""Build providers from a JSON config file.

Example::

    {
      "max_in_flight": 8,
      "generator": {"backend": "http", "base_url": "https://api.openai.com/v1",
                    "model": "gpt-4", "api_key_env": "OPENAI_API_KEY"},
      "embedder":  {"backend": "http", "base_url": "https://api.openai.com/v1",
                    "model": "text-embedding-3-small", "api_key_env": "OPENAI_API_KEY"},
      "scorer":    {"backend": "http", "base_url": "http://localhost:8080"},
      "judges": [
        {"backend": "http", "base_url": "...", "model": "gpt-4o-2024-08-06", "api_key_env": "OPENAI_API_KEY"},
        {"backend": "mock", "script": "judge_script.json", "model": "mock-judge"}
      ]
    }

``embedder`` defaults to the generator; ``scorer`` defaults to a constant
0.5 table scorer, which leaves pairwise ranking to its tie-break.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from nuggetgen.provider.base import Provider
from nuggetgen.provider.cache import DiskCache
from nuggetgen.provider.http import HttpPairwiseScorer, HttpProvider
from nuggetgen.provider.mock import ScriptedProvider, load_script


@dataclass
class ProviderSet:
    generator: Provider
    embedder: Provider
    judges: list[Provider] = field(default_factory=list)
    scorer: Optional[Callable[[str, str, str], float]] = None
    description: dict = field(default_factory=dict)

    @property
    def model_tags(self) -> dict:
        return {
            "generator": self.generator.model_tag,
            "embedder": self.embedder.model_tag,
            "judges": [j.model_tag for j in self.judges],
        }


def _build(entry: dict, base_dir: Path, cache: Optional[DiskCache], defaults: dict) -> Provider:
    backend = entry.get("backend", "http")
    common = dict(cache=cache, **defaults)
    if backend == "mock":
        script = entry.get("script")
        rules = load_script(base_dir / script) if script else []
        return ScriptedProvider(rules, model_tag=entry.get("model", "mock"), cache=cache,
                                max_in_flight=defaults.get("max_in_flight", 8))
    if backend == "http":
        for required in ("base_url", "model"):
            if required not in entry:
                raise ValueError(f"http provider entry lacks {required!r}: {entry}")
        return HttpProvider(
            entry["model"], entry["base_url"], entry.get("api_key_env"),
            embedding_model=entry.get("embedding_model"), **common,
        )
    raise ValueError(f"unknown provider backend {backend!r}")


def _build_scorer(entry: Optional[dict], base_dir: Path):
    from nuggetgen.ranking import TableScorer

    if entry is None:
        return TableScorer({}, default=0.5)
    backend = entry.get("backend", "http")
    if backend == "table":
        table = json.loads((base_dir / entry["path"]).read_text()) if "path" in entry else {}
        return TableScorer(table, default=entry.get("default", 0.5))
    if backend == "http":
        return HttpPairwiseScorer(entry["base_url"], entry.get("api_key_env"))
    raise ValueError(f"unknown scorer backend {backend!r}")


def load_provider_config(
    path: Optional[str | Path] = None,
    cache_dir: Optional[str | Path] = None,
    mock_script: Optional[str | Path] = None,
) -> ProviderSet:
    """Providers from ``path``; with only ``mock_script``, every role is that script."""
    cache = DiskCache(cache_dir) if cache_dir else None
    if path is None:
        if mock_script is None:
            raise ValueError("need a provider config or a mock script")
        mock = ScriptedProvider.from_file(mock_script, cache=cache)
        return ProviderSet(mock, mock, [mock], _build_scorer(None, Path(".")),
                           description={"mock_script": str(mock_script)})
    path = Path(path)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    base_dir = path.parent
    if mock_script is not None:
        cfg.setdefault("generator", {"backend": "mock", "script": str(Path(mock_script).resolve())})
    defaults = {k: cfg[k] for k in ("max_in_flight", "max_retries", "backoff") if k in cfg}
    if "generator" not in cfg:
        raise ValueError(f"{path}: 'generator' entry is required")
    generator = _build(cfg["generator"], base_dir, cache, defaults)
    embedder = _build(cfg["embedder"], base_dir, cache, defaults) if "embedder" in cfg else generator
    judges = [_build(j, base_dir, cache, defaults) for j in cfg.get("judges", [])]
    return ProviderSet(generator, embedder, judges, _build_scorer(cfg.get("scorer"), base_dir), description=cfg)

"""Versioned prompt templates.

Templates are plain text files with ``{name}`` placeholders. A directory of
same-named files can override any of them without touching code.
"""

from __future__ import annotations

import hashlib
import re
from importlib import resources
from pathlib import Path
from typing import Optional

PROMPTS_VERSION = "1"

TEMPLATE_NAMES = (
    "detect",
    "summarize",
    "rewrite",
    "baseline_plain",
    "baseline_cot",
    "cot_demonstration",
    "judge_create",
    "judge_assign",
)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PromptSet:
    def __init__(self, override_dir: Optional[str | Path] = None):
        self.override_dir = Path(override_dir) if override_dir else None
        self._texts = {name: self._read(name) for name in TEMPLATE_NAMES}

    def _read(self, name: str) -> str:
        if self.override_dir is not None:
            candidate = self.override_dir / f"{name}.txt"
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")

    def raw(self, name: str) -> str:
        return self._texts[name]

    def render(self, name: str, **values: object) -> str:
        """Fill placeholders; braces that are not known placeholders are left alone."""
        template = self._texts[name]
        missing = {m for m in _PLACEHOLDER.findall(template) if m not in values}
        if missing:
            raise KeyError(f"template {name!r} needs values for {sorted(missing)}")
        return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)

    def digest(self) -> str:
        h = hashlib.sha256(PROMPTS_VERSION.encode())
        for name in TEMPLATE_NAMES:
            h.update(b"\0" + name.encode() + b"\0" + self._texts[name].encode("utf-8"))
        return h.hexdigest()


_default: Optional[PromptSet] = None


def default_prompts() -> PromptSet:
    global _default
    if _default is None:
        _default = PromptSet()
    return _default

"""Stage 1: tag answer-bearing spans in each passage and ground them."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

from nuggetgen.core import InformationNugget, Passage, Query, locate_nugget
from nuggetgen.prompts import PromptSet, default_prompts
from nuggetgen.provider import GenerationRequest, Provider, ProviderError

logger = logging.getLogger(__name__)

OPEN_TAG = "<nugget>"
CLOSE_TAG = "</nugget>"
_TAG = re.compile(r"</?nugget>")

RETRY_NOTE = (
    "Your previous annotation was rejected because it changed the passage text or left a tag "
    "unbalanced. Copy the passage character for character and only insert the tags.\n"
)


class UnbalancedTags(ValueError):
    """Annotation has nested, unopened or unclosed nugget tags."""


def build_detection_prompt(query: Query, passage: Passage, prompts: Optional[PromptSet] = None,
                           retry: bool = False) -> str:
    prompts = prompts or default_prompts()
    return prompts.render("detect", query=query.text, passage=passage.text,
                          retry_note=RETRY_NOTE if retry else "")


def extract_tagged_spans(annotated: str) -> list[str]:
    """Texts between balanced, non-nested tag pairs."""
    spans = []
    open_at: Optional[int] = None
    for m in _TAG.finditer(annotated):
        if m.group() == OPEN_TAG:
            if open_at is not None:
                raise UnbalancedTags(f"nested {OPEN_TAG} at offset {m.start()}")
            open_at = m.end()
        else:
            if open_at is None:
                raise UnbalancedTags(f"{CLOSE_TAG} without opening tag at offset {m.start()}")
            spans.append(annotated[open_at : m.start()])
            open_at = None
    if open_at is not None:
        raise UnbalancedTags(f"unclosed {OPEN_TAG}")
    return spans


def _drop_contained(nuggets: list[InformationNugget]) -> list[InformationNugget]:
    nuggets = sorted(set(nuggets), key=lambda n: (n.start, -n.end))
    kept: list[InformationNugget] = []
    for n in nuggets:
        if any(k.start <= n.start and n.end <= k.end for k in kept):
            continue
        kept.append(n)
    return kept


def parse_annotated_passage(original: Passage, annotated: str) -> tuple[list[InformationNugget], list[str]]:
    """Ground every tagged span against ``original``.

    Returns ``(nuggets, ungrounded)`` where ``ungrounded`` holds the span
    texts that could not be located. Spans fully contained in another span
    are dropped. Raises :class:`UnbalancedTags` for malformed markup.
    """
    if not annotated:
        raise ValueError("annotated text must be non-empty")
    nuggets, ungrounded = [], []
    for span in extract_tagged_spans(annotated):
        candidate = span.strip()
        found = locate_nugget(original, candidate) if candidate else None
        if found is None:
            ungrounded.append(span)
        else:
            nuggets.append(found)
    return _drop_contained(nuggets), ungrounded


def _diagnostic(query: Query, passage: Passage, kind: str, detail: str = "") -> None:
    logger.warning(
        "detection %s for %s/%s %s", kind, query.id, passage.id, detail,
        extra={"query_id": query.id, "passage_id": passage.id, "failure_kind": kind},
    )


def _detect_one(query: Query, passage: Passage, provider: Provider, prompts: PromptSet,
                max_output_tokens: int) -> list[InformationNugget]:
    for attempt in range(2):
        retry = attempt == 1
        try:
            result = provider.generate(GenerationRequest(
                build_detection_prompt(query, passage, prompts, retry=retry), "detect",
                max_output_tokens=max_output_tokens,
            ))
        except ProviderError as exc:
            _diagnostic(query, passage, "provider-error", str(exc))
            return []
        if not result.text.strip():
            _diagnostic(query, passage, "empty-annotation")
            return []
        try:
            nuggets, ungrounded = parse_annotated_passage(passage, result.text)
        except UnbalancedTags as exc:
            _diagnostic(query, passage, "unbalanced-tags", str(exc))
            continue
        for span in ungrounded:
            _diagnostic(query, passage, "ungrounded-span", repr(span[:80]))
        total = len(nuggets) + len(ungrounded)
        if retry or not total or len(ungrounded) * 2 <= total:
            return nuggets
    _diagnostic(query, passage, "skipped", "annotation failed twice")
    return []


def detect_nuggets(
    query: Query,
    passages: Sequence[Passage],
    provider: Provider,
    prompts: Optional[PromptSet] = None,
    max_output_tokens: int = 1024,
    workers: int = 4,
) -> list[InformationNugget]:
    """Nuggets of all passages, ordered by (passage rank, start offset).

    A passage whose annotation is malformed, or loses more than half its
    spans to grounding failures, is asked once more; after that whatever
    grounds is kept.
    """
    prompts = prompts or default_prompts()
    ordered = sorted(passages, key=lambda p: p.rank)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_passage = list(pool.map(
            lambda p: _detect_one(query, p, provider, prompts, max_output_tokens), ordered,
        ))
    return [n for group in per_passage for n in group]

"""Stages 4 and 5: summarize top clusters, assemble, rewrite; plus the prompting baselines."""

from __future__ import annotations

import logging
import math
import re
from typing import Optional, Sequence

from nuggetgen.core import (
    ClusterSummary,
    FacetCluster,
    GroundedResponse,
    Passage,
    Query,
    ResponseBudget,
    Sentence,
    citations_of,
    count_words,
)
from nuggetgen.prompts import PromptSet, default_prompts
from nuggetgen.provider import GenerationRequest, Provider, ProviderError
from nuggetgen.textutil import split_sentences

logger = logging.getLogger(__name__)

# summaries longer than this multiple of the budget are retried, then cut
OVERSHOOT = 1.5

BASELINE_PASSAGES = 5
BASELINE_SENTENCES = 3

_MARKER = re.compile(r"\[(\d+)\]")
# a sentence = text up to a run of markers, plus stray closing punctuation
_MARKED_UNIT = re.compile(r"(.*?)((?:\s*\[\d+\])+)([.!?]*)", re.S)


class SummaryFailed(RuntimeError):
    pass


def format_nuggets(cluster: FacetCluster) -> str:
    return "\n".join(f"- {n.text}" for n in cluster.nuggets)


def build_summary_prompt(query: Query, cluster: FacetCluster, word_budget: int,
                         prompts: Optional[PromptSet] = None, retry_words: Optional[int] = None) -> str:
    prompts = prompts or default_prompts()
    note = ""
    if retry_words is not None:
        note = (f"Your previous summary had {retry_words} words. That is too long: use one short "
                f"sentence of no more than {word_budget} words.\n")
    return prompts.render("summarize", query=query.text, nuggets=format_nuggets(cluster),
                          word_budget=word_budget, length_note=note)


def truncate_to_sentences(text: str, max_words: int) -> str:
    """Longest prefix of whole sentences within ``max_words``; a word cut if even the first is too long."""
    kept: list[str] = []
    used = 0
    for sent in split_sentences(text):
        w = count_words(sent)
        if used + w > max_words:
            break
        kept.append(sent)
        used += w
    if kept:
        return " ".join(kept)
    return " ".join(text.split()[:max_words])


def summarize_cluster(
    query: Query,
    cluster: FacetCluster,
    provider: Provider,
    word_budget: int = 35,
    prompts: Optional[PromptSet] = None,
    max_output_tokens: int = 256,
) -> ClusterSummary:
    """One-sentence query-biased summary citing every passage of the cluster.

    Raises :class:`SummaryFailed` on provider failure or empty output.
    """
    if word_budget <= 0:
        raise ValueError("word_budget must be positive")
    limit = math.floor(OVERSHOOT * word_budget)
    retry_words = None
    text = ""
    for _ in range(2):
        prompt = build_summary_prompt(query, cluster, word_budget, prompts, retry_words)
        try:
            text = provider.generate(GenerationRequest(prompt, "summarize", max_output_tokens)).text
        except ProviderError as exc:
            raise SummaryFailed(f"cluster {cluster.cluster_id}: {exc}") from exc
        text = " ".join(text.split())
        if not text:
            raise SummaryFailed(f"cluster {cluster.cluster_id}: empty summary")
        if count_words(text) <= limit:
            break
        retry_words = count_words(text)
    else:
        text = truncate_to_sentences(text, limit)
    return ClusterSummary(cluster.cluster_id, text, cluster.passage_ids)


def summarize_top(
    query: Query,
    ranked: Sequence[FacetCluster],
    n: int,
    provider: Provider,
    word_budget: int = 35,
    prompts: Optional[PromptSet] = None,
    max_output_tokens: int = 256,
) -> list[ClusterSummary]:
    """Summaries of the first ``n`` clusters that summarize successfully, in ranking order.

    A failed cluster is skipped and the next one in the ranking takes its place.
    """
    out = []
    for cluster in ranked:
        if len(out) == n:
            break
        try:
            out.append(summarize_cluster(query, cluster, provider, word_budget, prompts, max_output_tokens))
        except SummaryFailed as exc:
            logger.warning("summary skipped: %s", exc,
                           extra={"query_id": query.id, "failure_kind": "summary-failed"})
    return out


def assemble_response(query: Query, summaries: Sequence[ClusterSummary], budget: ResponseBudget,
                      run_tag: str = "") -> GroundedResponse:
    """Summaries in order as sentences; trailing summaries dropped to fit the budget."""
    kept: list[Sentence] = []
    if budget.sentences is not None:
        kept = [Sentence(s.text, s.citations) for s in summaries[: budget.sentences]]
    else:
        used = 0
        for s in summaries:
            if used + s.word_count > budget.words:
                break
            used += s.word_count
            kept.append(Sentence(s.text, s.citations))
    if not kept:
        logger.info("no answer found for %s", query.id, extra={"query_id": query.id, "failure_kind": "no-answer"})
    return GroundedResponse(query.id, tuple(kept), run_tag, rewritten=False)


def marker_numbers(response: GroundedResponse) -> dict[str, int]:
    """Passage id -> 1-based marker, numbered by first citation."""
    numbers: dict[str, int] = {}
    for s in response.sentences:
        for pid in sorted(s.citations):
            numbers.setdefault(pid, len(numbers) + 1)
    return numbers


def render_with_markers(response: GroundedResponse) -> str:
    numbers = marker_numbers(response)
    parts = []
    for s in response.sentences:
        marks = "".join(f"[{numbers[p]}]" for p in sorted(s.citations, key=numbers.get))
        parts.append(f"{s.text} {marks}".rstrip())
    return " ".join(parts)


def parse_marked_text(text: str, numbers: dict[str, int]) -> Optional[list[Sentence]]:
    """Sentences with citations recovered from markers; ``None`` if any text lacks a marker
    or a marker is unknown."""
    by_number = {v: k for k, v in numbers.items()}
    sentences = []
    pos = 0
    text = text.strip()
    for m in _MARKED_UNIT.finditer(text):
        if m.start() != pos:
            return None
        pos = m.end()
        body = " ".join(m.group(1).split())
        body = re.sub(r"\s+([.,;:!?])", r"\1", body) + m.group(3)
        marks = [int(x) for x in _MARKER.findall(m.group(2))]
        if not body.strip(" .!?") or any(k not in by_number for k in marks):
            return None
        sentences.append(Sentence(body, frozenset(by_number[k] for k in marks)))
    if text[pos:].strip():
        return None
    return sentences


def rewrite_fluency(
    query: Query,
    response: GroundedResponse,
    provider: Provider,
    budget: ResponseBudget,
    prompts: Optional[PromptSet] = None,
    max_output_tokens: int = 1024,
) -> GroundedResponse:
    """Rephrase for coherence, carrying citations through inline ``[n]`` markers.

    The rewrite is accepted only if it keeps exactly the input's set of
    markers, every sentence carries one, and it still fits ``budget``.
    Otherwise one retry, then the input comes back unchanged.
    """
    if response.no_answer:
        raise ValueError("cannot rewrite an empty response")
    prompts = prompts or default_prompts()
    numbers = marker_numbers(response)
    marked = render_with_markers(response)
    for attempt in range(2):
        note = ""
        if attempt:
            note = ("Your previous rewrite lost or altered the bracketed source markers or exceeded the "
                    "length limit. Keep every marker and end every sentence with its markers.\n")
        prompt = prompts.render("rewrite", query=query.text, response=marked, retry_note=note,
                                budget=budget.describe())
        try:
            out = provider.generate(GenerationRequest(prompt, "rewrite", max_output_tokens)).text
        except ProviderError as exc:
            logger.warning("rewrite failed for %s: %s", query.id, exc,
                           extra={"query_id": query.id, "failure_kind": "rewrite-error"})
            continue
        sentences = parse_marked_text(out, numbers)
        if sentences:
            candidate = GroundedResponse(response.query_id, tuple(sentences), response.run_tag, rewritten=True)
            if citations_of(candidate) == citations_of(response) and budget.allows(candidate):
                return candidate
        logger.warning("rewrite rejected by gate for %s (attempt %d)", query.id, attempt + 1,
                       extra={"query_id": query.id, "failure_kind": "rewrite-gate"})
    return response


def format_passages(passages: Sequence[Passage]) -> str:
    return "\n".join(f"[{i}] {p.text}" for i, p in enumerate(passages, 1))


def build_baseline_prompt(query: Query, passages: Sequence[Passage], mode: str = "plain",
                          prompts: Optional[PromptSet] = None) -> str:
    prompts = prompts or default_prompts()
    if mode == "plain":
        return prompts.render("baseline_plain", query=query.text, passages=format_passages(passages))
    if mode == "cot":
        return prompts.render("baseline_cot", query=query.text, passages=format_passages(passages),
                              demonstration=prompts.raw("cot_demonstration").strip())
    raise ValueError(f"unknown baseline mode {mode!r}")


def _final_answer(text: str) -> str:
    marker = "final answer:"
    idx = text.lower().rfind(marker)
    return text[idx + len(marker):] if idx >= 0 else text


def generate_baseline(
    query: Query,
    passages: Sequence[Passage],
    provider: Provider,
    mode: str = "plain",
    prompts: Optional[PromptSet] = None,
    run_tag: str = "",
    max_output_tokens: int = 512,
) -> GroundedResponse:
    """Single-prompt answer from the top five passages.

    Every sentence cites all five passages. Provider errors propagate.
    """
    if len(passages) != BASELINE_PASSAGES:
        raise ValueError(f"baseline needs exactly {BASELINE_PASSAGES} passages, got {len(passages)}")
    passages = sorted(passages, key=lambda p: p.rank)
    prompt = build_baseline_prompt(query, passages, mode, prompts)
    text = provider.generate(GenerationRequest(prompt, "baseline", max_output_tokens)).text
    if mode == "cot":
        text = _final_answer(text)
    ids = frozenset(p.id for p in passages)
    sents = split_sentences(" ".join(text.split()))[:BASELINE_SENTENCES]
    return GroundedResponse(query.id, tuple(Sentence(s, ids) for s in sents), run_tag)

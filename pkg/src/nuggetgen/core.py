"""Shared data model and grounding primitives.

Every stage of the pipeline passes these immutable records around. The one
rule that matters most lives in :class:`InformationNugget`: a nugget's text is
always an exact character slice of its source passage.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

_WS_RUN = re.compile(r"\s+")


class GroundingError(ValueError):
    """A span does not reproduce the source passage text exactly."""


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class Passage:
    """One entry of the input ranking."""

    id: str
    text: str
    rank: int
    score: float = 0.0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"passage {self.id!r}: rank must be >= 1, got {self.rank}")
        if not self.text:
            raise ValueError(f"passage {self.id!r} has empty text")


def check_ranked_list(passages: Iterable[Passage]) -> list[Passage]:
    """Validate ids are unique and return the passages sorted by rank."""
    passages = list(passages)
    seen: set[str] = set()
    for p in passages:
        if p.id in seen:
            raise ValueError(f"duplicate passage id {p.id!r} in ranked list")
        seen.add(p.id)
    return sorted(passages, key=lambda p: p.rank)


@dataclass(frozen=True)
class InformationNugget:
    """A verbatim span ``[start, end)`` of one passage.

    ``passage_rank`` is carried along so later stages can order nuggets and
    clusters by retrieval rank without looking the passage up again.
    """

    passage_id: str
    start: int
    end: int
    text: str
    passage_rank: int = 1

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise GroundingError(f"bad span [{self.start}, {self.end})")
        if self.end - self.start != len(self.text):
            raise GroundingError("span length does not match nugget text")
        if not self.text.strip():
            raise GroundingError("nugget text is blank")

    @property
    def sort_key(self) -> tuple[int, int, int, str]:
        return (self.passage_rank, self.start, self.end, self.passage_id)

    def is_grounded_in(self, passage: Passage) -> bool:
        return (
            passage.id == self.passage_id
            and self.end <= len(passage.text)
            and passage.text[self.start : self.end] == self.text
        )


@dataclass(frozen=True)
class FacetCluster:
    cluster_id: int
    nuggets: tuple[InformationNugget, ...]
    label: Optional[str] = None

    def __post_init__(self):
        if not self.nuggets:
            raise ValueError(f"cluster {self.cluster_id} is empty")
        # normalize member order: first appearance in the ranking
        object.__setattr__(self, "nuggets", tuple(sorted(self.nuggets, key=lambda n: n.sort_key)))

    @property
    def best_rank(self) -> int:
        return min(n.passage_rank for n in self.nuggets)

    @property
    def passage_ids(self) -> frozenset[str]:
        return frozenset(n.passage_id for n in self.nuggets)


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    text: str
    citations: frozenset[str]
    word_count: int = -1

    def __post_init__(self):
        object.__setattr__(self, "citations", frozenset(self.citations))
        wc = count_words(self.text)
        if self.word_count == -1:
            object.__setattr__(self, "word_count", wc)
        elif self.word_count != wc:
            raise ValueError(f"word_count {self.word_count} != {wc} for summary text")


@dataclass(frozen=True)
class Sentence:
    text: str
    citations: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "citations", frozenset(self.citations))


@dataclass(frozen=True)
class GroundedResponse:
    query_id: str
    sentences: tuple[Sentence, ...] = ()
    run_tag: str = ""
    rewritten: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))

    @property
    def no_answer(self) -> bool:
        return not self.sentences

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)

    @property
    def word_count(self) -> int:
        return sum(count_words(s.text) for s in self.sentences)


@dataclass(frozen=True)
class ResponseBudget:
    """Either a sentence cap or a word cap on the assembled response."""

    sentences: Optional[int] = None
    words: Optional[int] = None

    def __post_init__(self):
        if (self.sentences is None) == (self.words is None):
            raise ValueError("exactly one of sentences/words must be set")
        limit = self.sentences if self.sentences is not None else self.words
        if limit < 1:
            raise ValueError("response budget must be positive")

    def allows(self, response: GroundedResponse) -> bool:
        if self.sentences is not None:
            return len(response.sentences) <= self.sentences
        return response.word_count <= self.words

    def describe(self) -> str:
        if self.sentences is not None:
            return f"at most {self.sentences} sentences"
        return f"at most {self.words} words"


CLUSTERERS = ("embedding-agglomerative", "lsa")
RANKERS = ("pairwise", "bm25")


@dataclass(frozen=True)
class PipelineConfig:
    top_k_passages: int = 20
    facet_threshold: int = 3
    summary_word_budget: int = 35
    response_sentence_limit: Optional[int] = None
    response_word_limit: Optional[int] = 400
    rewrite_enabled: bool = True
    clusterer: str = "embedding-agglomerative"
    ranker: str = "pairwise"
    similarity_threshold: float = 0.6
    lsa_dims: int = 20
    max_output_tokens: int = 512
    scorer_char_budget: int = 2000
    workers: int = 4

    def __post_init__(self):
        if self.top_k_passages < 1:
            raise ValueError("top_k_passages must be >= 1")
        if self.facet_threshold < 1:
            raise ValueError("facet_threshold must be >= 1")
        if self.summary_word_budget < 1 or self.max_output_tokens < 1:
            raise ValueError("budgets must be positive")
        if self.clusterer not in CLUSTERERS:
            raise ValueError(f"unknown clusterer {self.clusterer!r}; choose from {CLUSTERERS}")
        if self.ranker not in RANKERS:
            raise ValueError(f"unknown ranker {self.ranker!r}; choose from {RANKERS}")
        self.budget  # validates the sentence/word pair

    @classmethod
    def for_top_k(cls, top_k: int, **overrides) -> "PipelineConfig":
        """Config with the response budget of the given input regime.

        Five passages get a three-sentence response; ten or more get 400 words.
        """
        if top_k <= 5:
            limits = dict(response_sentence_limit=3, response_word_limit=None)
        else:
            limits = dict(response_sentence_limit=None, response_word_limit=400)
        limits.update(overrides)
        return cls(top_k_passages=top_k, **limits)

    @property
    def budget(self) -> ResponseBudget:
        return ResponseBudget(sentences=self.response_sentence_limit, words=self.response_word_limit)


def count_words(text: str) -> int:
    """Number of maximal non-whitespace runs."""
    return len(text.split())


def citations_of(response: GroundedResponse) -> frozenset[str]:
    out: set[str] = set()
    for s in response.sentences:
        out |= s.citations
    return frozenset(out)


def _collapse_with_map(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to one space; keep each kept char's original offset."""
    chars: list[str] = []
    offsets: list[int] = []
    prev_ws = False
    for i, ch in enumerate(text):
        if ch.isspace():
            if prev_ws:
                continue
            prev_ws = True
            chars.append(" ")
        else:
            prev_ws = False
            chars.append(ch)
        offsets.append(i)
    return "".join(chars), offsets


def locate_nugget(passage: Passage, candidate_text: str) -> Optional[InformationNugget]:
    """Ground ``candidate_text`` in ``passage``; ``None`` means not found.

    Exact leftmost match first, then a match that ignores differences in
    whitespace runs. Offsets always refer to the original passage text.
    """
    if not candidate_text:
        raise ValueError("candidate_text must be non-empty")
    if not candidate_text.strip():
        return None
    text = passage.text
    start = text.find(candidate_text)
    if start >= 0:
        end = start + len(candidate_text)
    else:
        needle = _WS_RUN.sub(" ", candidate_text).strip()
        hay, offsets = _collapse_with_map(text)
        pos = hay.find(needle)
        if pos < 0:
            return None
        start = offsets[pos]
        end = offsets[pos + len(needle) - 1] + 1
    span = text[start:end]
    if not span.strip():
        return None
    return InformationNugget(passage.id, start, end, span, passage.rank)

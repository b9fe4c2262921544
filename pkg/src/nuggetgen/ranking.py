"""Stage 3: order facet clusters by relevance to the query."""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Mapping, Optional, Sequence

from nuggetgen.core import FacetCluster, Query
from nuggetgen.textutil import tokenize

logger = logging.getLogger(__name__)

BM25_K1 = 0.9
BM25_B = 0.4

Scorer = Callable[[str, str, str], float]


class ContractViolation(ValueError):
    """A pairwise backend returned a value outside [0, 1]."""


@dataclass(frozen=True)
class ClusterRanking:
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranking scores must be non-increasing")
        ids = [c for c, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("cluster appears twice in ranking")

    @property
    def cluster_ids(self) -> list[int]:
        return [c for c, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def serialize_cluster(cluster: FacetCluster, char_budget: Optional[int] = None) -> str:
    text = " ".join(n.text for n in cluster.nuggets)
    if char_budget is not None and len(text) > char_budget:
        text = text[:char_budget]
    return text


def _order(clusters: Sequence[FacetCluster], scores: Mapping[int, float]) -> ClusterRanking:
    ordered = sorted(clusters, key=lambda c: (-scores[c.cluster_id], c.best_rank, c.cluster_id))
    return ClusterRanking(tuple((c.cluster_id, scores[c.cluster_id]) for c in ordered))


class TableScorer:
    """Scripted pairwise scorer for tests and offline runs.

    Keys are ``"text_a|||text_b"`` or the SHA-256 hex digest of that string.
    Unknown pairs return ``default`` or raise ``KeyError`` when it is None.
    """

    def __init__(self, table: Mapping[str, float], default: Optional[float] = None):
        self.table = dict(table)
        self.default = default

    @staticmethod
    def key(text_a: str, text_b: str) -> str:
        return hashlib.sha256(f"{text_a}|||{text_b}".encode("utf-8")).hexdigest()

    def __call__(self, query: str, text_a: str, text_b: str) -> float:
        raw = f"{text_a}|||{text_b}"
        if raw in self.table:
            return self.table[raw]
        digest = self.key(text_a, text_b)
        if digest in self.table:
            return self.table[digest]
        if self.default is None:
            raise KeyError(raw)
        return self.default


def pairwise_score(query: Query, text_a: str, text_b: str, scorer: Scorer) -> float:
    """Probability that ``text_a`` answers ``query`` better than ``text_b``."""
    if not text_a or not text_b:
        raise ValueError("pairwise_score needs two non-empty texts")
    if text_a == text_b:
        return 0.5
    p = float(scorer(query.text, text_a, text_b))
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ContractViolation(f"pairwise score {p} outside [0, 1]")
    return p


def rank_pairwise(
    query: Query,
    clusters: Sequence[FacetCluster],
    scorer: Scorer,
    char_budget: Optional[int] = None,
    workers: int = 4,
) -> ClusterRanking:
    """Score every ordered pair and rank by summed win probability.

    If either direction of a pair fails, both directions count 0.5.
    """
    if not clusters:
        raise ValueError("rank_pairwise needs at least one cluster")
    texts = {c.cluster_id: serialize_cluster(c, char_budget) for c in clusters}
    pairs = list(permutations([c.cluster_id for c in clusters], 2))

    def score(pair):
        i, j = pair
        try:
            return pairwise_score(query, texts[i], texts[j], scorer)
        except Exception as exc:  # any backend failure degrades to uninformative
            logger.warning("pairwise scorer failed for %s clusters %d/%d: %s", query.id, i, j, exc,
                           extra={"query_id": query.id, "failure_kind": "scorer-error"})
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        table = dict(zip(pairs, pool.map(score, pairs)))
    for (i, j), p in list(table.items()):
        if p is None or table[(j, i)] is None:
            table[(i, j)] = table[(j, i)] = 0.5
    totals = {c.cluster_id: 0.0 for c in clusters}
    for (i, _), p in sorted(table.items()):
        totals[i] += p
    return _order(clusters, totals)


def bm25_scores(query_text: str, documents: Sequence[str], k1: float = BM25_K1, b: float = BM25_B) -> list[float]:
    """BM25 of ``query_text`` against each document, the documents being the whole collection.

    idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)), floored at 0.
    """
    docs = [Counter(tokenize(d)) for d in documents]
    lengths = [sum(d.values()) for d in docs]
    n_docs = len(docs)
    avgdl = sum(lengths) / n_docs if n_docs else 0.0
    if avgdl == 0:
        return [0.0] * n_docs
    df = Counter(t for d in docs for t in d)
    terms = sorted(set(tokenize(query_text)))
    scores = []
    for doc, length in zip(docs, lengths):
        total = 0.0
        for t in terms:
            tf = doc.get(t, 0)
            if not tf:
                continue
            idf = max(0.0, math.log(1 + (n_docs - df[t] + 0.5) / (df[t] + 0.5)))
            total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * length / avgdl))
        scores.append(total)
    return scores


def rank_bm25(query: Query, clusters: Sequence[FacetCluster], char_budget: Optional[int] = None) -> ClusterRanking:
    if not clusters:
        raise ValueError("rank_bm25 needs at least one cluster")
    docs = [serialize_cluster(c, char_budget) for c in clusters]
    scores = bm25_scores(query.text, docs)
    return _order(clusters, {c.cluster_id: s for c, s in zip(clusters, scores)})


def select_top(ranking: ClusterRanking, n: int) -> list[int]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return ranking.cluster_ids[:n]

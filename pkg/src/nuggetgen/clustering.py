"""Stage 2: group nuggets into facet clusters.

Both methods embed the nuggets (provider embeddings, or LSA coordinates of a
term-frequency matrix) and run average-linkage agglomeration over cosine
similarity, merging while the best pair's mean similarity reaches the
threshold.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from nuggetgen.core import FacetCluster, InformationNugget
from nuggetgen.provider import Provider
from nuggetgen.textutil import tokenize

MIN_NUGGETS_FOR_CLUSTERING = 4

# mean similarities closer than this count as equal
TIE_EPS = 1e-12


class ClusteringError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClusteringParams:
    method: str = "embedding-agglomerative"
    similarity_threshold: float = 0.6
    lsa_dims: int = 20
    min_nuggets_for_clustering: int = MIN_NUGGETS_FOR_CLUSTERING

    def __post_init__(self):
        if self.method not in ("embedding-agglomerative", "lsa"):
            raise ValueError(f"unknown clustering method {self.method!r}")
        if not 0 < self.similarity_threshold < 1:
            raise ValueError("similarity_threshold must lie in (0, 1)")
        if self.lsa_dims < 2:
            raise ValueError("lsa_dims must be >= 2")
        if self.min_nuggets_for_clustering != MIN_NUGGETS_FOR_CLUSTERING:
            raise ValueError("min_nuggets_for_clustering is fixed at 4")


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; a zero vector is dissimilar (0) to everything."""
    v = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = v / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    zero = norms == 0
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def average_linkage(similarity: np.ndarray, threshold: float) -> list[list[int]]:
    """Agglomerate items ``0..n-1``; return groups as sorted index lists, sorted by first index.

    Each step merges the pair of groups with the highest mean pairwise
    similarity, provided it is at least ``threshold``. Among near-equal
    candidates the pair whose smallest members come first wins.
    """
    n = similarity.shape[0]
    groups: dict[int, list[int]] = {i: [i] for i in range(n)}
    # sums[a, b] = total similarity between members of groups a and b
    sums = np.array(similarity, dtype=float, copy=True)
    while len(groups) > 1:
        ids = np.array(sorted(groups))
        sizes = np.array([len(groups[i]) for i in ids], dtype=float)
        mean = sums[np.ix_(ids, ids)] / np.outer(sizes, sizes)
        upper = np.triu(np.ones_like(mean, dtype=bool), k=1)
        best_val = mean[upper].max()
        if best_val < threshold - TIE_EPS:
            break
        # row-major scan of the upper triangle = lexicographic (a, b) order
        x, y = np.argwhere(upper & (mean >= best_val - TIE_EPS))[0]
        a, b = int(ids[x]), int(ids[y])
        groups[a].extend(groups.pop(b))
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def _singletons(nuggets: Sequence[InformationNugget]) -> list[FacetCluster]:
    return [FacetCluster(i, (n,)) for i, n in enumerate(nuggets)]


def _to_clusters(ordered: list[InformationNugget], groups: list[list[int]]) -> list[FacetCluster]:
    members = [[ordered[i] for i in g] for g in groups]
    # groups are sorted by smallest canonical index, so this is (best rank, first appearance)
    members.sort(key=lambda ms: (min(m.passage_rank for m in ms), min(m.sort_key for m in ms)))
    return [FacetCluster(cid, tuple(ms)) for cid, ms in enumerate(members)]


def cluster_vectors(nuggets: Sequence[InformationNugget], vectors: np.ndarray,
                    threshold: float) -> list[FacetCluster]:
    """Cluster nuggets given one vector per nugget (same order)."""
    order = sorted(range(len(nuggets)), key=lambda i: nuggets[i].sort_key)
    ordered = [nuggets[i] for i in order]
    sim = cosine_matrix(np.asarray(vectors)[order])
    return _to_clusters(ordered, average_linkage(sim, threshold))


def cluster_nuggets(nuggets: Sequence[InformationNugget], params: ClusteringParams,
                    provider: Optional[Provider] = None) -> list[FacetCluster]:
    nuggets = list(nuggets)
    if len(nuggets) < params.min_nuggets_for_clustering:
        return _singletons(nuggets)
    if params.method == "lsa":
        return cluster_nuggets_lsa(nuggets, params)
    if provider is None:
        raise ClusteringError("embedding clustering needs a provider")
    try:
        vectors = provider.embed([n.text for n in nuggets])
    except Exception as exc:
        raise ClusteringError(f"embedding failed: {exc}") from exc
    return cluster_vectors(nuggets, vectors, params.similarity_threshold)


def term_frequency_matrix(texts: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    counts = [Counter(tokenize(t)) for t in texts]
    vocab = sorted(set().union(*counts))
    index = {term: j for j, term in enumerate(vocab)}
    tf = np.zeros((len(texts), len(vocab)))
    for i, c in enumerate(counts):
        for term, k in c.items():
            tf[i, index[term]] = k
    return tf, vocab


def lsa_vectors(texts: Sequence[str], dims: int) -> np.ndarray:
    """Document coordinates ``U_r * S_r`` of a rank-r truncated SVD of the TF matrix."""
    tf, vocab = term_frequency_matrix(texts)
    if not vocab:
        raise ClusteringError("empty vocabulary after normalization")
    u, s, _ = np.linalg.svd(tf, full_matrices=False)
    rank = int(np.linalg.matrix_rank(tf))
    r = max(1, min(dims, rank))
    return u[:, :r] * s[:r]


def cluster_nuggets_lsa(nuggets: Sequence[InformationNugget], params: ClusteringParams) -> list[FacetCluster]:
    nuggets = list(nuggets)
    if len(nuggets) < params.min_nuggets_for_clustering:
        return _singletons(nuggets)
    vectors = lsa_vectors([n.text for n in nuggets], params.lsa_dims)
    return cluster_vectors(nuggets, vectors, params.similarity_threshold)

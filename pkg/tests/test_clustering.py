import random

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage

from nuggetgen.clustering import (
    ClusteringError,
    ClusteringParams,
    average_linkage,
    cluster_nuggets,
    cluster_nuggets_lsa,
    cosine_matrix,
    term_frequency_matrix,
)
from nuggetgen.core import InformationNugget
from nuggetgen.provider import ScriptedProvider
from oracles import brute_force_average_linkage

PARAMS = ClusteringParams()
LSA = ClusteringParams(method="lsa")


def nugget(text, pid, rank, start=0):
    return InformationNugget(pid, start, start + len(text), text, rank)


def nuggets_from(texts):
    return [nugget(t, f"p{i}", i + 1) for i, t in enumerate(texts)]


def partition(clusters):
    return sorted(sorted((n.passage_id, n.start) for n in c.nuggets) for c in clusters)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(similarity_threshold=0.0), dict(similarity_threshold=1.0),
                                    dict(lsa_dims=1), dict(method="bertopic"), dict(min_nuggets_for_clustering=3)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ClusteringParams(**kw)


class TestFallback:
    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_below_four_is_singletons(self, k):
        ns = nuggets_from(["same"] * k)
        for params in (PARAMS, LSA):
            clusters = cluster_nuggets(ns, params, ScriptedProvider())
            assert [c.nuggets for c in clusters] == [(n,) for n in ns]
            assert [c.cluster_id for c in clusters] == list(range(k))

    def test_fallback_does_not_embed(self):
        class NoEmbed(ScriptedProvider):
            def _embed(self, texts):
                raise AssertionError("should not embed")

        assert len(cluster_nuggets(nuggets_from(["a", "b", "c"]), PARAMS, NoEmbed())) == 3

    def test_lsa_fallback_matches(self):
        ns = nuggets_from(["x y", "z", "w"])
        assert cluster_nuggets_lsa(ns, LSA) == cluster_nuggets(ns, PARAMS, ScriptedProvider())


class TestEmbeddingClustering:
    def test_identical_texts_merge(self):
        ns = nuggets_from(["the cat sat"] * 4)
        clusters = cluster_nuggets(ns, PARAMS, ScriptedProvider())
        assert len(clusters) == 1 and len(clusters[0].nuggets) == 4

    def test_two_constructed_groups(self):
        # group vectors: within-group cosine >= 0.9, cross-group <= 0.1
        a = [[1.0, 0.1, 0.0, 0.02], [1.0, 0.0, 0.03, 0.0], [1.0, 0.05, 0.0, 0.0]]
        b = [[0.0, 0.02, 1.0, 0.1], [0.03, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.05]]
        texts = [f"n{i}" for i in range(6)]
        vectors = [a[0], b[0], a[1], b[1], a[2], b[2]]
        sim = cosine_matrix(np.array(vectors))
        assert min(sim[i, j] for i in (0, 2, 4) for j in (0, 2, 4)) >= 0.9
        assert max(sim[i, j] for i in (0, 2, 4) for j in (1, 3, 5)) <= 0.1
        provider = ScriptedProvider(embeddings=dict(zip(texts, vectors)))
        clusters = cluster_nuggets(nuggets_from(texts), PARAMS, provider)
        assert [[n.text for n in c.nuggets] for c in clusters] == [["n0", "n2", "n4"], ["n1", "n3", "n5"]]
        assert brute_force_average_linkage(vectors, 0.6) == [[0, 2, 4], [1, 3, 5]]

    def test_cluster_order_and_ids(self):
        texts = ["w", "x", "y", "z"]
        vectors = {"w": [0, 1], "x": [1, 0], "y": [0, 1], "z": [1, 0]}
        ns = [nugget("w", "p9", 3), nugget("x", "p2", 2), nugget("y", "p1", 5), nugget("z", "p8", 1)]
        clusters = cluster_nuggets(ns, PARAMS, ScriptedProvider(embeddings=vectors))
        assert [c.cluster_id for c in clusters] == [0, 1]
        assert [c.best_rank for c in clusters] == [1, 3]
        assert [n.text for n in clusters[0].nuggets] == ["z", "x"]

    def test_degenerate_identical_vectors(self):
        texts = [f"t{i}" for i in range(5)]
        provider = ScriptedProvider(embeddings={t: [0.3, 0.3] for t in texts})
        assert len(cluster_nuggets(nuggets_from(texts), PARAMS, provider)) == 1

    def test_embedding_failure(self):
        class Broken(ScriptedProvider):
            def _embed(self, texts):
                raise RuntimeError("service down")

        with pytest.raises(ClusteringError):
            cluster_nuggets(nuggets_from(list("abcd")), PARAMS, Broken())

    def test_zero_vectors_stay_apart(self):
        sim = cosine_matrix(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))
        assert sim[0, 1] == 0 and sim[0, 2] == 0
        assert average_linkage(sim, 0.5) == [[0], [1], [2]]


def random_instance(rng, n):
    centers = [np.array([rng.gauss(0, 1) for _ in range(4)]) for _ in range(rng.randint(1, 3))]
    return [list(rng.choice(centers) + np.array([rng.gauss(0, rng.choice([0.1, 0.5, 1.0])) for _ in range(4)]))
            for _ in range(n)]


class TestOracleAgreement:
    def test_against_brute_force(self):
        rng = random.Random(7)
        for _ in range(150):
            n = rng.randint(1, 8)
            vectors = random_instance(rng, n)
            thr = rng.choice([0.2, 0.5, 0.6, 0.8, 0.95])
            assert average_linkage(cosine_matrix(np.array(vectors)), thr) == brute_force_average_linkage(vectors, thr)

    def test_against_scipy(self):
        # scipy's average linkage on cosine distance cut at 1 - threshold; no ties in continuous data
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 12))
            vectors = rng.normal(size=(n, 5))
            thr = float(rng.choice([0.1, 0.3, 0.6]))
            ours = average_linkage(cosine_matrix(vectors), thr)
            labels = fcluster(linkage(vectors, method="average", metric="cosine"), 1 - thr, criterion="distance")
            theirs = sorted(sorted(np.flatnonzero(labels == lab).tolist()) for lab in set(labels))
            assert ours == theirs

    def test_ties_with_dyadic_vectors(self):
        rng = random.Random(11)
        for _ in range(100):
            n = rng.randint(2, 8)
            vectors = [[rng.choice([0, 1, 2]) for _ in range(3)] for _ in range(n)]
            thr = rng.choice([0.5, 0.7])
            assert average_linkage(cosine_matrix(np.array(vectors, dtype=float)), thr) == \
                brute_force_average_linkage(vectors, thr)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(["red cat", "red cat sat", "blue dog", "the blue dog", "green", "tree frog",
                                     "a red car"]), min_size=0, max_size=10),
           st.sampled_from(["embedding-agglomerative", "lsa"]),
           st.randoms(use_true_random=False))
    def test_partition_and_permutation(self, texts, method, rnd):
        params = ClusteringParams(method=method)
        ns = nuggets_from(texts)
        clusters = cluster_nuggets(ns, params, ScriptedProvider())
        members = [n for c in clusters for n in c.nuggets]
        assert sorted(members, key=lambda n: n.sort_key) == sorted(ns, key=lambda n: n.sort_key)
        assert [c.cluster_id for c in clusters] == list(range(len(clusters)))
        ranks = [c.best_rank for c in clusters]
        assert ranks == sorted(ranks)
        shuffled = list(ns)
        rnd.shuffle(shuffled)
        again = cluster_nuggets(shuffled, params, ScriptedProvider())
        if len(ns) >= 4:
            assert again == clusters
        else:
            assert len(again) == len(ns)


class TestLSA:
    def test_tf_matrix_by_hand(self):
        tf, vocab = term_frequency_matrix(["red cat", "red cat!", "blue dog", "blue dog."])
        assert vocab == ["blue", "cat", "dog", "red"]
        assert tf.tolist() == [[0, 1, 0, 1], [0, 1, 0, 1], [1, 0, 1, 0], [1, 0, 1, 0]]

    def test_red_cat_blue_dog(self):
        ns = nuggets_from(["red cat", "red cat!", "blue dog", "blue dog."])
        clusters = cluster_nuggets_lsa(ns, LSA)
        assert [[n.text for n in c.nuggets] for c in clusters] == [["red cat", "red cat!"], ["blue dog", "blue dog."]]
        # independent route: reference SVD of the hand-built matrix, then the naive merge loop
        tf = np.array([[0, 1, 0, 1], [0, 1, 0, 1], [1, 0, 1, 0], [1, 0, 1, 0]], dtype=float)
        u, s, _ = scipy.linalg.svd(tf, full_matrices=False)
        r = np.linalg.matrix_rank(tf)
        assert r == 2
        coords = (u[:, :r] * s[:r]).tolist()
        assert brute_force_average_linkage(coords, 0.6) == [[0, 1], [2, 3]]

    def test_identical_texts(self):
        assert len(cluster_nuggets_lsa(nuggets_from(["same words"] * 4), LSA)) == 1

    def test_empty_vocabulary(self):
        with pytest.raises(ClusteringError):
            cluster_nuggets_lsa(nuggets_from(["!!", "?", "...", "--"]), LSA)

    def test_matches_reference_svd_pipeline(self):
        rng = random.Random(5)
        words = ["sun", "moon", "star", "sky", "rain", "snow", "wind", "cloud"]
        for _ in range(40):
            texts = [" ".join(rng.choices(words, k=rng.randint(1, 4))) for _ in range(rng.randint(4, 8))]
            params = ClusteringParams(method="lsa", lsa_dims=rng.choice([2, 3, 20]), similarity_threshold=0.6)
            ns = nuggets_from(texts)
            ours = partition(cluster_nuggets_lsa(ns, params))
            tf, _ = term_frequency_matrix(texts)
            u, s, _ = scipy.linalg.svd(tf, full_matrices=False)
            r = min(params.lsa_dims, np.linalg.matrix_rank(tf))
            groups = brute_force_average_linkage((u[:, :r] * s[:r]).tolist(), 0.6)
            expected = sorted(sorted((f"p{i}", 0) for i in g) for g in groups)
            assert ours == expected

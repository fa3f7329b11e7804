import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duple.diffcore import Tensor, grad_check, tsum
from duple.fpm import build_prototypes, choose_k, class_scores, cluster_class, within_cluster_sse
from oracles import best_partition_sse


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (10, 3)])
def test_choose_k(n, k):
    assert choose_k(n) == k


def test_one_cluster_is_the_mean():
    x = np.random.default_rng(0).normal(size=(5, 4))
    c, lab = cluster_class(x, 1)
    np.testing.assert_allclose(c[0], x.mean(axis=0), atol=1e-15)
    assert np.all(lab == 0)


def test_singleton_clusters_are_the_points():
    x = np.random.default_rng(1).normal(size=(3, 4))
    c, _ = cluster_class(x, 3)
    assert sorted(map(tuple, c)) == sorted(map(tuple, x))


def test_four_point_example():
    x = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    c, lab = cluster_class(x, 2)
    assert sorted(map(tuple, c)) == [(0.0, 0.5), (10.0, 0.5)]
    assert within_cluster_sse(x, lab) == pytest.approx(best_partition_sse(x, 2), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 2), st.sampled_from([1, 2, 5, 128]))
def test_sse_matches_exhaustive_oracle(seed, n, k, dim):
    k = min(k, n)
    x = np.random.default_rng(seed).normal(size=(n, dim))
    _, lab = cluster_class(x, k)
    assert len(set(lab.tolist())) == k
    assert within_cluster_sse(x, lab) <= best_partition_sse(x, k) + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 3))
def test_permutation_invariance(seed, n, k):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 6))
    perm = rng.permutation(n)
    c0, l0 = cluster_class(x, k)
    c1, l1 = cluster_class(x[perm], k)
    np.testing.assert_allclose(c0, c1, atol=1e-9)
    np.testing.assert_array_equal(l0[perm], l1)


def test_single_prototype_score_is_scaled_cosine():
    rng = np.random.default_rng(2)
    q, p = rng.normal(size=(3, 8)), rng.normal(size=(1, 8))
    s = class_scores(Tensor(q), [Tensor(p)], 7.0).data[:, 0]
    cos = q @ p[0] / (np.linalg.norm(q, axis=1) * np.linalg.norm(p[0]))
    np.testing.assert_allclose(s, 7.0 * cos, atol=1e-12)


def test_two_similarity_example():
    q = np.array([[1.0, 0.0]])
    protos = np.array([[0.9, math.sqrt(1 - 0.81)], [0.5, math.sqrt(1 - 0.25)]])
    s = class_scores(Tensor(q), [Tensor(protos)], 10.0).item()
    assert s == pytest.approx(9.01814992791781, abs=1e-9)


def test_duplicate_prototype_adds_ln2():
    rng = np.random.default_rng(3)
    q, p = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    a = class_scores(Tensor(q), [Tensor(p)], 4.0).data
    b = class_scores(Tensor(q), [Tensor(np.vstack([p, p]))], 4.0).data
    np.testing.assert_allclose(b - a, math.log(2), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(0.1, 50), st.floats(1e-3, 1e3))
def test_score_bounds_and_scale_invariance(seed, k, lam, a):
    rng = np.random.default_rng(seed)
    q, p = rng.normal(size=(4, 6)), rng.normal(size=(k, 6))
    s = class_scores(Tensor(q), [Tensor(p)], lam).data[:, 0]
    cos = (q / np.linalg.norm(q, axis=1, keepdims=True)) @ (p / np.linalg.norm(p, axis=1, keepdims=True)).T
    top = lam * cos.max(axis=1)
    assert np.all(top - 1e-9 <= s) and np.all(s <= top + math.log(k) + 1e-9)
    scaled = class_scores(Tensor(q), [Tensor(a * p)], lam).data[:, 0]
    np.testing.assert_allclose(scaled, s, atol=1e-9)


def test_prototypes_are_differentiable_means():
    rng = np.random.default_rng(4)
    support = Tensor(rng.normal(size=(8, 5)))
    labels = np.repeat(np.arange(2), 4)
    q = Tensor(rng.normal(size=(3, 5)))

    def f(support, q):
        protos = build_prototypes(support, labels, 2)
        return tsum(class_scores(q, protos, 3.0) * Tensor(rng_w))

    rng_w = rng.normal(size=(3, 2))
    assert [p.shape[0] for p in build_prototypes(support, labels, 2)] == [2, 2]
    assert grad_check(f, [support, q]) < 1e-4


def test_single_shot_prototype_is_the_embedding():
    z = np.random.default_rng(5).normal(size=(3, 4))
    protos = build_prototypes(Tensor(z), np.arange(3), 3, multi=True)
    for c in range(3):
        np.testing.assert_array_equal(protos[c].data[0], z[c])


def test_zero_norm_query_scores_zero(caplog):
    s = class_scores(Tensor(np.zeros((1, 4))), [Tensor(np.ones((1, 4)))], 5.0)
    assert s.item() == 0.0
    assert "zero-norm" in caplog.text


@pytest.mark.parametrize("seed", range(5))
def test_large_sets_use_iterative_kmeans(seed):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    x = np.vstack([c + rng.normal(size=(10, 2)) for c in centers])
    c, lab = cluster_class(x, 3)
    # each true group lands in its own cluster
    assert sorted(len(set(lab[i * 10:(i + 1) * 10].tolist())) for i in range(3)) == [1, 1, 1]
    assert len(set(lab.tolist())) == 3
    perm = rng.permutation(30)
    c1, lab1 = cluster_class(x[perm], 3)
    np.testing.assert_allclose(c1, c, atol=1e-9)
    np.testing.assert_array_equal(lab[perm], lab1)

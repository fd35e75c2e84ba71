import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoloop.exceptions import DataError
from geoloop.index import KdIndex


def brute_radius(P, q, eps):
    d = np.linalg.norm(P - q, axis=1)
    return sorted(((i, float(d[i])) for i in np.flatnonzero(d <= eps)), key=lambda r: (r[1], r[0]))


def brute_knn(P, q, k):
    d = np.linalg.norm(P - q, axis=1)
    return sorted(((i, float(d[i])) for i in range(len(P))), key=lambda r: (r[1], r[0]))[:k]


def build(P, leaf_size=16):
    return KdIndex(P.shape[1], leaf_size).insert_many(enumerate(P))


def same(a, b):
    return [i for i, _ in a] == [i for i, _ in b] and np.allclose([d for _, d in a], [d for _, d in b],
                                                                  rtol=0, atol=1e-12)


def test_single_insert():
    idx = KdIndex(3).insert(7, [1.0, 2.0, 3.0])
    assert len(idx) == 1 and 7 in idx
    assert idx.query_knn([1.0, 2.0, 3.0], 1) == [(7, 0.0)]


def test_many_inserts():
    P = np.random.default_rng(0).normal(size=(1000, 4))
    assert len(build(P)) == 1000


def test_insert_errors():
    idx = KdIndex(2).insert(0, [0.0, 0.0])
    with pytest.raises(DataError):
        idx.insert(0, [1.0, 1.0])
    with pytest.raises(DataError):
        idx.insert(1, [1.0, 1.0, 1.0])
    with pytest.raises(DataError):
        idx.query_radius([0.0], 1.0)


def test_empty_index():
    idx = KdIndex(3)
    assert idx.query_radius(np.zeros(3), 10.0) == []
    assert idx.query_knn(np.zeros(3), 4) == []


def test_radius_zero_finds_exact_point():
    P = np.random.default_rng(1).normal(size=(200, 5))
    idx = build(P)
    assert [i for i, _ in idx.query_radius(P[42], 0.0)] == [42]


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(500, 32))
    idx = build(P)
    for q in rng.normal(size=(50, 32)):
        eps = float(np.quantile(np.linalg.norm(P - q, axis=1), rng.uniform(0.0, 0.3)))
        assert same(idx.query_radius(q, eps), brute_radius(P, q, eps))
        k = int(rng.integers(1, 20))
        assert same(idx.query_knn(q, k), brute_knn(P, q, k))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=80),
       st.integers(1, 6), st.integers(1, 100))
def test_ties_and_duplicates(points, leaf, k):
    # integer lattice points create many equal distances and duplicates
    P = np.array(points, dtype=float)
    idx = build(P, leaf)
    q = np.array([0.5, 0.0])
    assert same(idx.query_knn(q, k), brute_knn(P, q, k))
    assert same(idx.query_radius(q, 2.0), brute_radius(P, q, 2.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 120))
def test_infinite_radius_equals_full_knn(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, 3))
    idx = build(P, 4)
    q = rng.normal(size=3)
    assert idx.query_radius(q, math.inf) == idx.query_knn(q, len(idx))


def test_sorted_insertions_trigger_rebuild():
    P = np.column_stack([np.arange(2000.0), np.zeros(2000)])
    idx = build(P, 4)
    assert idx.rebuilds > 0
    assert idx.depth <= 2 * math.log2(len(idx)) + 8
    assert same(idx.query_knn([1000.2, 0.0], 3), brute_knn(P, np.array([1000.2, 0.0]), 3))


def test_sublinear_visits():
    rng = np.random.default_rng(0)
    P = rng.uniform(size=(10_000, 2))
    idx = build(P)
    visits = []
    for q in rng.uniform(size=(100, 2)):
        idx.query_knn(q, 5)
        visits.append(idx.last_visits)
    assert np.median(visits) < 0.3 * len(idx)

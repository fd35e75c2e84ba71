import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoloop.exceptions import ConfigError, DataError
from geoloop.supervision import (KernelParams, LabelThresholds, PairSet, attach_distance_weights,
                                 inverse_distance_weights, kernel, label_pairs, sample_batch,
                                 self_similarity, write_matrix_csv, write_pgm)

fix = st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(-math.pi, math.pi))


def test_kernel_examples():
    p = KernelParams(gamma_t=0.01, gamma_R=2.0)
    assert kernel((3.0, 4.0, 1.0), (3.0, 4.0, 1.0), p) == 1.0
    assert math.isclose(kernel((0, 0, 0.3), (10, 0, 0.3), p), 0.36787944117144233, rel_tol=1e-12)
    # wrapped bearing gap is 0.2 rad, not 2*pi - 0.2
    v = kernel((0, 0, math.pi - 0.1), (0, 0, -math.pi + 0.1), p)
    assert math.isclose(v, 0.9231163463866358, rel_tol=1e-9)


def test_default_bandwidths():
    p = KernelParams()
    assert p.gamma_t == 0.005
    assert math.isclose(p.gamma_R, 1.8237813055620802)
    # about 0.61 at a 10 m and pi/6 offset
    assert math.isclose(kernel((0, 0, 0), (10, 0, math.pi / 6), p), math.exp(-1.0), rel_tol=1e-12)
    with pytest.raises(ConfigError):
        KernelParams(gamma_t=0.0)


@given(fix, fix)
def test_kernel_symmetric_and_bounded(a, b):
    k = kernel(a, b)
    assert k == kernel(b, a)
    assert 0.0 <= k <= 1.0


def test_kernel_monotone_in_distance():
    gaps = np.linspace(0, 60, 61)
    values = [kernel((0, 0, 0.5), (g, 0, 0.5)) for g in gaps]
    assert all(a > b for a, b in zip(values, values[1:]) if b > 0)


def test_self_similarity_examples():
    p = KernelParams(gamma_t=0.01, gamma_R=2.0)
    assert np.array(self_similarity(np.array([[1.0, 2.0, 0.0]]), p)).tolist() == [[1.0]]
    S = np.array(self_similarity(np.array([[0, 0, 0], [10, 0, 0], [20, 0, 0.0]]), p))
    assert math.isclose(S[0, 1], math.exp(-1))
    assert math.isclose(S[0, 2], math.exp(-4))


@settings(max_examples=30)
@given(st.lists(fix, min_size=1, max_size=15))
def test_similarity_matrix_invariants(frames):
    S = np.array(self_similarity(np.array(frames)))
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_array_equal(np.diag(S), 1.0)
    assert S.min() >= 0.0 and S.max() <= 1.0


def test_label_examples():
    K = np.full((20, 20), 0.01)
    np.fill_diagonal(K, 1.0)
    ps = label_pairs(K, LabelThresholds(0.9, 0.4), 10)
    assert ps.n_positives == 0
    assert ps.n_negatives == sum(1 for i in range(20) for j in range(i + 11, 20))
    K = np.eye(3)
    K[0, 1] = K[1, 0] = 0.95
    assert [0, 1] in label_pairs(K, LabelThresholds(0.9, 0.4), 0).positives.tolist()


def test_thresholds_validated():
    with pytest.raises(ConfigError):
        LabelThresholds(0.4, 0.9)


@settings(max_examples=30)
@given(st.lists(fix, min_size=2, max_size=25), st.integers(0, 5))
def test_label_invariants(frames, guard):
    S = np.array(self_similarity(np.array(frames)))
    th = LabelThresholds()
    ps = label_pairs(S, th, guard)
    for (i, j) in ps.positives:
        assert i < j and j - i > guard and S[i, j] > th.tau_p
    for (i, j) in ps.negatives:
        assert i < j and j - i > guard and S[i, j] < th.tau_n
    pos = set(map(tuple, ps.positives.tolist()))
    assert not pos & set(map(tuple, ps.negatives.tolist()))
    if ps.n_positives and ps.n_negatives:
        assert S[tuple(ps.negatives.T)].max() < S[tuple(ps.positives.T)].min()


def test_reference_positives_audit(reference_session):
    sess, frames, truth = reference_session
    Z = np.array([[f.fix.x, f.fix.y, f.fix.bearing] for f in frames])
    ps = label_pairs(self_similarity(Z), LabelThresholds(), 10)
    T = np.array([p.to_vector() for p in truth])
    assert ps.n_positives > 0
    for i, j in ps.positives:
        assert math.hypot(*(T[i, :2] - T[j, :2])) < 5.0


def make_pairs(n_pos=5, n_neg=40):
    pos = [(k, k + 11) for k in range(n_pos)]
    neg = [(k, k + 12) for k in range(n_neg)]
    return PairSet(pos, neg)


def test_batch_shape_and_labels():
    batch = sample_batch(make_pairs(), None, 3, batch_positives=2, neg_ratio=10)
    assert batch.shape == (22, 3)
    assert batch[:2, 2].tolist() == [1, 1] and not batch[2:, 2].any()
    pos = set(map(tuple, make_pairs().positives.tolist()))
    assert all(tuple(r[:2]) in pos for r in batch[:2])


def test_batch_deterministic():
    a = sample_batch(make_pairs(), None, 11, 2, 10)
    b = sample_batch(make_pairs(), None, 11, 2, 10)
    np.testing.assert_array_equal(a, b)


def test_batch_errors():
    with pytest.raises(DataError):
        sample_batch(make_pairs(1, 40), None, 0, batch_positives=2)
    with pytest.raises(DataError):
        sample_batch(PairSet(np.zeros((0, 2)), [(0, 20)]), None, 0, 1, 1)


def test_inverse_distance_sampling_ratio():
    X = np.zeros((4, 1))
    X[1, 0], X[3, 0] = 1.0, 3.0
    pairs = PairSet([(0, 2)], [(0, 1), (0, 3)])
    counts = np.zeros(2)
    rng = np.random.default_rng(5)
    from geoloop.core import RngStream
    stream = RngStream(5)
    for _ in range(10000):
        b = sample_batch(pairs, X, stream, batch_positives=1, neg_ratio=1)
        counts[0 if b[1, 1] == 1 else 1] += 1
    assert abs(counts[0] / counts[1] - 3.0) < 0.3


def test_weight_clamp():
    X = np.array([[0.0], [1e-9], [1.0], [2.0], [1000.0]])
    pairs = np.array([[0, 1], [0, 2], [0, 3], [0, 4]])
    w = inverse_distance_weights(pairs, X)
    med = np.median(1.0 / (np.abs(X[pairs[:, 1], 0]) + 1e-6))
    assert w.max() <= 10 * med + 1e-12 and w.min() >= 0.1 * med - 1e-12


def test_attached_weights_are_for_negatives():
    X = np.random.default_rng(0).normal(size=(60, 4))
    ps = attach_distance_weights(make_pairs(), X)
    np.testing.assert_array_equal(ps.pos_weights, 1.0)
    assert len(ps.neg_weights) == ps.n_negatives


def test_matrix_exports(tmp_path):
    M = np.array([[1.0, 0.5], [0.5, 1.0]])
    write_pgm(M, tmp_path / "m.pgm")
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert list(data[-4:]) == [255, 128, 128, 255]
    write_matrix_csv(M, tmp_path / "m.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "m.csv", delimiter=","), M)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geoloop.core import (Pose2, RngStream, as_rng, se2_compose, se2_inverse, se2_relative,
                          wrap_angle, wrap_angles)

finite = st.floats(-1e3, 1e3, allow_nan=False)
angles = st.floats(-50.0, 50.0, allow_nan=False)
poses = st.builds(Pose2, finite, finite, angles)


def close(a: Pose2, b: Pose2, tol=1e-9):
    return (abs(a.x - b.x) < tol and abs(a.y - b.y) < tol
            and abs(wrap_angle(a.theta - b.theta)) < tol)


@given(angles)
def test_wrap_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w <= math.pi
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_wrap_examples():
    assert wrap_angle(0.0) == 0.0
    assert math.isclose(wrap_angle(3 * math.pi / 2), -math.pi / 2)
    assert math.isclose(wrap_angle(2 * math.pi + 0.1), 0.1)


@given(st.lists(angles, min_size=1, max_size=20))
def test_wrap_odd_symmetric(xs):
    a = np.array(xs)
    np.testing.assert_array_equal(wrap_angles(-a), -wrap_angles(a))


def test_wrap_rejects_nan():
    with pytest.raises(ValueError):
        wrap_angles(np.array([0.0, np.nan]))


@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert close(se2_compose(se2_compose(a, b), c), se2_compose(a, se2_compose(b, c)), 1e-6)


@given(poses)
def test_inverse_cancels(p):
    assert close(se2_compose(p, se2_inverse(p)), Pose2(), 1e-6)
    assert close(se2_compose(se2_inverse(p), p), Pose2(), 1e-6)


@given(poses, poses)
def test_relative_matches_definition(a, b):
    assert close(se2_relative(a, b), se2_compose(se2_inverse(a), b), 1e-6)
    assert close(se2_compose(a, se2_relative(a, b)), b, 1e-6)


def test_compose_by_hand():
    a = Pose2(1.0, 2.0, math.pi / 2)
    b = Pose2(3.0, 0.0, 0.0)
    c = a @ b
    assert close(c, Pose2(1.0, 5.0, math.pi / 2))


def test_pose_vector_roundtrip():
    p = Pose2(1.5, -2.0, 4.0)
    assert -math.pi <= p.theta <= math.pi
    assert Pose2.from_vector(p.to_vector()) == p


def test_rng_is_reproducible():
    a, b = RngStream(7), RngStream(7)
    np.testing.assert_array_equal(a.normal(size=5), b.normal(size=5))
    np.testing.assert_array_equal(a.spawn(3).uniform(size=4), b.spawn(3).uniform(size=4))
    assert not np.array_equal(RngStream(7).spawn(1).normal(size=4), RngStream(7).spawn(2).normal(size=4))


def test_as_rng():
    s = RngStream(3)
    assert as_rng(s) is s
    assert as_rng(None).seed == 0
    assert as_rng(5).seed == 5
    with pytest.raises(ValueError):
        RngStream(-1)

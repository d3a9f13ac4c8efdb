"""Quaternion and similarity-transform algebra checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneweaver.transforms import (
    Similarity,
    matrix_to_quat,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def test_quat_identity_matrix():
    assert np.allclose(quat_to_matrix([1.0, 0, 0, 0]), np.eye(3))


def test_quat_90deg_about_z():
    # independently derived: q = (cos45, 0, 0, sin45) maps x-axis to y-axis
    s = np.sqrt(0.5)
    m = quat_to_matrix([s, 0.0, 0.0, s])
    assert np.allclose(m @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(m @ [0, 0, 1], [0, 0, 1], atol=1e-12)


def test_quat_matrix_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = random_quat(rng)
        m = quat_to_matrix(q)
        q2 = matrix_to_quat(m)
        # q and -q encode the same rotation
        assert np.allclose(q, q2, atol=1e-9) or np.allclose(q, -q2, atol=1e-9)


def test_quat_multiply_matches_matrix_product():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a, b = random_quat(rng), random_quat(rng)
        lhs = quat_to_matrix(quat_multiply(a, b))
        rhs = quat_to_matrix(a) @ quat_to_matrix(b)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_quat_rotate_matches_matrix():
    rng = np.random.default_rng(5)
    q = random_quat(rng)
    v = rng.normal(size=(7, 3))
    assert np.allclose(quat_rotate(q, v), v @ quat_to_matrix(q).T)


def test_quat_normalize_batch():
    q = np.array([[2.0, 0, 0, 0], [0, 0, 3.0, 0]])
    out = quat_normalize(q)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)


def test_similarity_apply_known_values():
    # scale 2, rotate 90 deg about z, translate (1, 0, 0):
    # (1, 0, 0) -> 2*(0, 1, 0) + (1, 0, 0) = (1, 2, 0)
    s = np.sqrt(0.5)
    rot = quat_to_matrix([s, 0, 0, s])
    tf = Similarity(rot, [1.0, 0.0, 0.0], 2.0)
    assert np.allclose(tf.apply([1.0, 0.0, 0.0]), [1.0, 2.0, 0.0], atol=1e-12)


def test_similarity_inverse_round_trip():
    rng = np.random.default_rng(6)
    rot = quat_to_matrix(random_quat(rng))
    tf = Similarity(rot, rng.normal(size=3), 1.7)
    pts = rng.normal(size=(20, 3))
    assert np.allclose(tf.inverse().apply(tf.apply(pts)), pts, atol=1e-10)


def test_similarity_compose_order():
    rng = np.random.default_rng(7)
    a = Similarity(quat_to_matrix(random_quat(rng)), rng.normal(size=3), 2.0)
    b = Similarity(quat_to_matrix(random_quat(rng)), rng.normal(size=3), 0.5)
    pts = rng.normal(size=(9, 3))
    assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-10)


def test_similarity_matrix_round_trip():
    rng = np.random.default_rng(8)
    tf = Similarity(quat_to_matrix(random_quat(rng)), rng.normal(size=3), 3.0)
    back = Similarity.from_matrix(tf.matrix())
    assert np.allclose(back.rotation, tf.rotation, atol=1e-10)
    assert np.allclose(back.translation, tf.translation, atol=1e-10)
    assert np.isclose(back.scale, tf.scale, atol=1e-10)


def test_similarity_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        Similarity(np.eye(3), np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        Similarity(np.eye(3), np.zeros(3), -1.0)


def test_apply_direction_ignores_translation_and_scale():
    tf = Similarity(np.eye(3), [5.0, 5.0, 5.0], 3.0)
    assert np.allclose(tf.apply_direction([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3))
def test_quat_to_matrix_is_orthonormal(q):
    m = quat_to_matrix(quat_normalize(np.array(q)))
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.isclose(np.linalg.det(m), 1.0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3),
       st.floats(0.1, 5.0))
def test_similarity_preserves_relative_distances(t, scale):
    rng = np.random.default_rng(0)
    rot = quat_to_matrix(random_quat(rng))
    tf = Similarity(rot, np.array(t), scale)
    pts = rng.normal(size=(6, 3))
    d0 = np.linalg.norm(pts[0] - pts[1])
    d1 = np.linalg.norm(tf.apply(pts[0]) - tf.apply(pts[1]))
    assert np.isclose(d1, scale * d0, rtol=1e-9, atol=1e-12)

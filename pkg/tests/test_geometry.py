from __future__ import annotations

import math

import numpy as np
import pytest

from trpose.geometry import (DEFAULT_WEIGHTS, LossWeights, Pose2, compose,
                             inverse, relative_pose, weighted_norm, wrap_angle)

from conftest import random_pose_tuple


def _matrix(p: Pose2) -> np.ndarray:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def _from_matrix(m: np.ndarray) -> tuple[float, float, float]:
    return (float(m[0, 2]), float(m[1, 2]), math.atan2(m[1, 0], m[0, 0]))


def _close(a: Pose2, b: Pose2, tol: float) -> bool:
    return (abs(a.x - b.x) <= tol and abs(a.y - b.y) <= tol
            and abs(wrap_angle(a.theta - b.theta)) <= tol)


def test_wrap_angle_half_open_interval():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0
    rng = np.random.default_rng(0)
    for t in rng.uniform(-50, 50, size=200):
        w = wrap_angle(float(t))
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(t), abs_tol=1e-12)
        assert math.isclose(math.cos(w), math.cos(t), abs_tol=1e-12)


def test_pose_wraps_theta_on_construction():
    p = Pose2(0.0, 0.0, 5 * math.pi / 2)
    assert p.theta == pytest.approx(math.pi / 2)


def test_pose_rejects_non_finite_components():
    with pytest.raises(ValueError):
        Pose2(math.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        Pose2(0.0, math.inf, 0.0)


def test_identity_is_neutral_element():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = Pose2(*random_pose_tuple(rng))
        e = Pose2.identity()
        assert _close(compose(p, e), p, 1e-12)
        assert _close(compose(e, p), p, 1e-12)


def test_inverse_cancels_to_identity():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = Pose2(*random_pose_tuple(rng))
        assert _close(compose(p, inverse(p)), Pose2.identity(), 1e-9)
        assert _close(compose(inverse(p), p), Pose2.identity(), 1e-9)


def test_compose_is_associative():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = Pose2(*random_pose_tuple(rng))
        b = Pose2(*random_pose_tuple(rng))
        c = Pose2(*random_pose_tuple(rng))
        assert _close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)


def test_compose_matches_homogeneous_matrix_product():
    rng = np.random.default_rng(4)
    for _ in range(500):
        a = Pose2(*random_pose_tuple(rng))
        b = Pose2(*random_pose_tuple(rng))
        got = compose(a, b)
        ex, ey, et = _from_matrix(_matrix(a) @ _matrix(b))
        assert abs(got.x - ex) <= 1e-12
        assert abs(got.y - ey) <= 1e-12
        assert abs(wrap_angle(got.theta - et)) <= 1e-12


def test_inverse_matches_matrix_inverse():
    rng = np.random.default_rng(5)
    for _ in range(500):
        a = Pose2(*random_pose_tuple(rng))
        got = inverse(a)
        ex, ey, et = _from_matrix(np.linalg.inv(_matrix(a)))
        assert abs(got.x - ex) <= 1e-9
        assert abs(got.y - ey) <= 1e-9
        assert abs(wrap_angle(got.theta - et)) <= 1e-9


def test_relative_pose_recovers_global_pose():
    # pose of a relative to b, composed back onto b, reproduces a
    rng = np.random.default_rng(6)
    for _ in range(200):
        a = Pose2(*random_pose_tuple(rng))
        b = Pose2(*random_pose_tuple(rng))
        rel = relative_pose(a, b)
        assert _close(compose(b, rel), a, 1e-9)


def test_relative_pose_of_pose_with_itself_is_identity():
    p = Pose2(3.0, -2.0, 1.2)
    assert _close(relative_pose(p, p), Pose2.identity(), 1e-12)


def test_weighted_norm_zero_only_at_identity():
    assert weighted_norm(Pose2.identity()) == 0.0
    assert weighted_norm(Pose2(1e-8, 0, 0)) > 0.0


def test_weighted_norm_default_weights():
    assert weighted_norm(Pose2(1.0, 0.0, 0.0)) == pytest.approx(1.0)
    assert weighted_norm(Pose2(0.0, 2.0, 0.0)) == pytest.approx(2.0)
    assert weighted_norm(Pose2(0.0, 0.0, 1.0)) == pytest.approx(math.sqrt(10.0))


def test_loss_weights_default_values():
    assert DEFAULT_WEIGHTS.w_x == 1.0
    assert DEFAULT_WEIGHTS.w_y == 1.0
    assert DEFAULT_WEIGHTS.w_theta == 10.0


def test_loss_weights_reject_non_positive():
    with pytest.raises(ValueError):
        LossWeights(w_x=0.0)
    with pytest.raises(ValueError):
        LossWeights(w_theta=-1.0)

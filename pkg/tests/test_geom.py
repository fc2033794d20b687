import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from monolocapi.geom import (
    HORIZONTAL_DOF,
    VERTICAL_DOF,
    EulerZYX,
    Pose,
    Quaternion,
    compose_partial,
    decompose,
    euler_to_rotation,
    is_rotation,
    normalize,
    quat_from_matrix,
    quat_from_rotvec,
    quat_increment,
    quat_multiply,
    quat_to_matrix,
    recompose,
    rotation_exp,
    rotation_log,
    rotation_to_euler,
    skew
)
from monolocapi.utils import DataNotAsExpected, DtOutOfRange, GimbalLock


def random_pose(rng):
    return Pose(Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(), rng.normal(size=3) * 10)


def test_normalize(rng):
    for _ in range(20):
        q = normalize(Quaternion.from_array(rng.normal(size=4)))
        assert abs(q.norm() - 1.0) < 1e-9
    with pytest.raises(DataNotAsExpected):
        normalize(Quaternion(0.0, 0.0, 0.0, 0.0))


def test_quaternion_matrices_are_rotations(rng):
    for _ in range(20):
        q = normalize(Quaternion.from_array(rng.normal(size=4)))
        R = quat_to_matrix(q)
        assert is_rotation(R)
        np.testing.assert_allclose(quat_to_matrix(quat_from_matrix(R)), R, atol=1e-12)


def test_quaternion_product_matches_matrix_product(rng):
    q1 = normalize(Quaternion.from_array(rng.normal(size=4)))
    q2 = normalize(Quaternion.from_array(rng.normal(size=4)))
    np.testing.assert_allclose(quat_to_matrix(quat_multiply(q1, q2)),
                               quat_to_matrix(q1) @ quat_to_matrix(q2), atol=1e-12)


def test_rotvec_exponential_agrees_with_matrix_exponential(rng):
    for phi in (np.zeros(3), np.array([1e-14, 0.0, 0.0]), rng.normal(size=3)):
        np.testing.assert_allclose(quat_to_matrix(quat_from_rotvec(phi)), rotation_exp(phi), atol=1e-12)


def test_quat_increment_requires_positive_dt():
    with pytest.raises(DtOutOfRange):
        quat_increment(np.zeros(3), 0.0)
    q = quat_increment(np.array([0.0, 0.0, math.pi / 2]), 1.0)
    np.testing.assert_allclose(quat_to_matrix(q) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)


def test_skew_is_the_cross_product(rng):
    v, u = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(v) @ u, np.cross(v, u), atol=1e-12)
    np.testing.assert_allclose(skew(v), -skew(v).T)


def test_rotation_log_inverts_exp(rng):
    phi = rng.normal(size=3) * 0.5
    np.testing.assert_allclose(rotation_log(rotation_exp(phi)), phi, atol=1e-12)


def test_pose_inverse_and_associativity(rng):
    a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
    identity = a.inverse().compose(a)
    np.testing.assert_allclose(identity.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(identity.translation, np.zeros(3), atol=1e-6)
    left = a.compose(b).compose(c).as_matrix()
    right = a.compose(b.compose(c)).as_matrix()
    np.testing.assert_allclose(left, right, atol=1e-9)


def test_pose_applies_rotation_then_translation():
    pose = Pose(euler_to_rotation(EulerZYX(yaw=math.pi / 2)), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(pose.apply(np.array([[1.0, 0.0, 0.0]])), [[1.0, 1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(Pose.from_matrix(pose.as_matrix()).as_matrix(), pose.as_matrix())


def test_euler_round_trip_away_from_gimbal_lock(rng):
    for _ in range(50):
        euler = EulerZYX(yaw=rng.uniform(-math.pi, math.pi), pitch=rng.uniform(-1.5, 1.5),
                         roll=rng.uniform(-math.pi, math.pi))
        R = euler_to_rotation(euler)
        np.testing.assert_allclose(euler_to_rotation(rotation_to_euler(R)), R, atol=1e-9)


def test_gimbal_lock_is_reported():
    with pytest.raises(GimbalLock):
        rotation_to_euler(euler_to_rotation(EulerZYX(pitch=math.pi / 2)))


def test_pitch_sign_convention():
    # Ry(pitch) with pitch > 0 turns the forward axis downwards
    forward = euler_to_rotation(EulerZYX(pitch=math.radians(10.0)))[:, 0]
    assert forward[2] < 0


def test_decompose_recompose(rng):
    pose = recompose(EulerZYX(0.3, -0.2, 0.1), np.array([1.0, 2.0, 3.0]))
    euler, translation = decompose(pose)
    np.testing.assert_allclose(recompose(euler, translation).as_matrix(), pose.as_matrix(), atol=1e-9)


def test_compose_partial_selects_components():
    euler = EulerZYX(yaw=0.1, pitch=0.02, roll=-0.03)
    translation = np.array([1.0, -2.0, 0.3])

    vertical_euler, vertical_t = decompose(compose_partial(euler, translation, VERTICAL_DOF))
    assert vertical_euler.yaw == pytest.approx(0.0, abs=1e-12)
    assert vertical_euler.pitch == pytest.approx(0.02, abs=1e-12)
    assert vertical_euler.roll == pytest.approx(-0.03, abs=1e-12)
    np.testing.assert_allclose(vertical_t, [0.0, 0.0, 0.3])

    horizontal_euler, horizontal_t = decompose(compose_partial(euler, translation, HORIZONTAL_DOF))
    assert horizontal_euler.yaw == pytest.approx(0.1, abs=1e-12)
    assert horizontal_euler.pitch == 0.0 and horizontal_euler.roll == 0.0
    np.testing.assert_allclose(horizontal_t, [1.0, -2.0, 0.0])

    with pytest.raises(DataNotAsExpected):
        compose_partial(euler, translation, "sideways")


def test_is_rotation_rejects_reflections():
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
    assert not is_rotation(np.eye(3) * 1.01)

"""Rotation, quaternion and rigid-transform algebra.

Conventions used throughout the package:

- Quaternions are Hamilton, scalar first, and rotate body vectors into the navigation frame.
- Euler angles are intrinsic Z-Y-X (yaw, pitch, roll): R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
- A Pose maps points of its child frame into its parent frame: p_parent = R @ p_child + t.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .utils import DataNotAsExpected, DtOutOfRange, GimbalLock

GIMBAL_MARGIN = 1e-3

VERTICAL_DOF = "vertical"      # z, pitch, roll
HORIZONTAL_DOF = "horizontal"  # x, y, yaw


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z)."""
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(q) -> "Quaternion":
        return Quaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class EulerZYX:
    """Intrinsic Z-Y-X angles in radians."""
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3)."""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise DataNotAsExpected(f"Rotation must be 3x3, got {rotation.shape}")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        return Pose(matrix[:3, :3].copy(), matrix[:3, 3].copy())

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def compose(self, other: "Pose") -> "Pose":
        """Returns self ∘ other, i.e. other is applied first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transforms an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation


def normalize(q: Quaternion) -> Quaternion:
    """Returns q scaled to unit norm."""
    arr = q.as_array()
    n = np.linalg.norm(arr)
    if n == 0.0 or not np.isfinite(n):
        raise DataNotAsExpected("Cannot normalize a zero or non-finite quaternion.")
    return Quaternion.from_array(arr / n)


def quat_multiply(q1: Quaternion, q2: Quaternion) -> Quaternion:
    """Hamilton product q1 ⊗ q2."""
    w1, x1, y1, z1 = q1.w, q1.x, q1.y, q1.z
    w2, x2, y2, z2 = q2.w, q2.x, q2.y, q2.z
    return Quaternion(
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_to_matrix(q: Quaternion) -> np.ndarray:
    """Rotation matrix of a unit quaternion."""
    w, x, y, z = q.w, q.x, q.y, q.z
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_from_matrix(rotation: np.ndarray) -> Quaternion:
    """Unit quaternion with non-negative scalar part for a rotation matrix."""
    x, y, z, w = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    return Quaternion(float(w), float(x), float(y), float(z))


def quat_from_rotvec(phi: np.ndarray) -> Quaternion:
    """Exact exponential map of a rotation vector."""
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(phi))
    if angle < 1e-12:
        # second order series of sin(angle/2)/angle and cos(angle/2)
        s = 0.5 - angle * angle / 48.0
        c = 1.0 - angle * angle / 8.0
    else:
        s = math.sin(0.5 * angle) / angle
        c = math.cos(0.5 * angle)
    return Quaternion(c, s * phi[0], s * phi[1], s * phi[2])


def quat_increment(omega: np.ndarray, dt: float) -> Quaternion:
    """Attitude increment for a constant angular rate over dt seconds."""
    if not dt > 0.0:
        raise DtOutOfRange(f"dt must be positive, got {dt}")
    return quat_from_rotvec(np.asarray(omega, dtype=np.float64) * dt)


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def rotation_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix of a rotation vector."""
    return Rotation.from_rotvec(np.asarray(phi, dtype=np.float64).reshape(3)).as_matrix()


def rotation_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix."""
    return Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_rotvec()


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(euler: EulerZYX) -> np.ndarray:
    return rot_z(euler.yaw) @ rot_y(euler.pitch) @ rot_x(euler.roll)


def rotation_to_euler(rotation: np.ndarray) -> EulerZYX:
    """Z-Y-X angles of a rotation matrix.

    Raises:
    - GimbalLock: If |pitch| >= pi/2 - 1e-3.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    pitch = -math.asin(max(-1.0, min(1.0, rotation[2, 0])))
    if abs(pitch) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLock(f"Pitch {math.degrees(pitch):.3f} deg is too close to +-90 deg.")
    yaw = math.atan2(rotation[1, 0], rotation[0, 0])
    roll = math.atan2(rotation[2, 1], rotation[2, 2])
    return EulerZYX(yaw=yaw, pitch=pitch, roll=roll)


def decompose(pose: Pose) -> Tuple[EulerZYX, np.ndarray]:
    """Splits a pose into its Euler angles and translation."""
    return rotation_to_euler(pose.rotation), pose.translation.copy()


def recompose(euler: EulerZYX, translation: np.ndarray) -> Pose:
    return Pose(euler_to_rotation(euler), np.asarray(translation, dtype=np.float64))


def compose_partial(euler: EulerZYX, translation: np.ndarray, dof: Optional[str] = None) -> Pose:
    """Builds a pose from a subset of the six pose components.

    Parameters:
    - euler: The angles. Components outside `dof` must be zero unless `dof` is given.
    - translation: The translation. Same rule as for `euler`.
    - dof: VERTICAL_DOF keeps (z, pitch, roll), HORIZONTAL_DOF keeps (x, y, yaw); the other
      components are forced to zero. None takes the inputs as they are.

    Returns:
    The pose Rz(yaw) Ry(pitch) Rx(roll) with the selected translation.
    """
    translation = np.asarray(translation, dtype=np.float64).reshape(3)
    if dof == VERTICAL_DOF:
        euler = EulerZYX(yaw=0.0, pitch=euler.pitch, roll=euler.roll)
        translation = np.array([0.0, 0.0, translation[2]])
    elif dof == HORIZONTAL_DOF:
        euler = EulerZYX(yaw=euler.yaw, pitch=0.0, roll=0.0)
        translation = np.array([translation[0], translation[1], 0.0])
    elif dof is not None:
        raise DataNotAsExpected(f"Unknown degree-of-freedom selection '{dof}'.")
    return recompose(euler, translation)


def pose_from_quaternion(q: Quaternion, position: np.ndarray) -> Pose:
    return Pose(quat_to_matrix(q), np.asarray(position, dtype=np.float64))


def is_rotation(rotation: np.ndarray, tol: float = 1e-9) -> bool:
    """True if the matrix is orthonormal with determinant +1 within tol."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        return False
    return (np.allclose(rotation.T @ rotation, np.eye(3), atol=tol)
            and abs(np.linalg.det(rotation) - 1.0) < tol)

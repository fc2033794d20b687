import math

import numpy as np
import pytest

from monolocapi.datastructures import CameraIntrinsics, DepthFrame
from monolocapi.geom import EulerZYX, Pose, euler_to_rotation
from monolocapi.simulator import Box, Rectangle, SyntheticWorld, build_world


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=80.0, cy=60.0, width=160, height=120, f_canonical=50.0)


@pytest.fixture
def flat_frame(intrinsics):
    """Frame of constant canonical depth 2.5 (metric 5 m) with full confidence and no mask."""
    shape = (intrinsics.height, intrinsics.width)
    return DepthFrame(np.full(shape, 2.5), np.ones(shape), np.zeros(shape, dtype=np.uint8), intrinsics)


def make_room(density: float = 20.0, seed: int = 0) -> SyntheticWorld:
    """16 x 10 m room, 3 m walls, three pillars placed asymmetrically."""
    height = 3.0
    primitives = [
        Rectangle((0.0, -5.0, 0.0), (16.0, 0.0, 0.0), (0.0, 10.0, 0.0), "floor"),
        Rectangle((0.0, -5.0, 0.0), (16.0, 0.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((0.0, 5.0, 0.0), (16.0, 0.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((0.0, -5.0, 0.0), (0.0, 10.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((16.0, -5.0, 0.0), (0.0, 10.0, 0.0), (0.0, 0.0, height), "wall"),
        Box((5.0, -2.0), (0.6, 0.6, height), top=False, label="pillar"),
        Box((11.0, 2.0), (0.6, 0.6, height), top=False, label="pillar"),
        Box((8.0, 3.0), (1.2, 0.6, height), yaw_deg=30.0, top=False, label="pillar"),
    ]
    return SyntheticWorld("room", primitives, (0.0, -5.0, 16.0, 5.0), density=density, seed=seed)


@pytest.fixture(scope="session")
def room_map():
    return build_world(make_room())


def planar_offset(dx: float, dy: float, yaw_deg: float, dz: float = 0.0) -> Pose:
    return Pose(euler_to_rotation(EulerZYX(yaw=math.radians(yaw_deg))), np.array([dx, dy, dz]))


def pose_errors(estimate: Pose, expected: Pose):
    """(translation error in m, rotation error in deg) between two poses."""
    diff = expected.inverse().compose(estimate)
    angle = math.acos(max(-1.0, min(1.0, (np.trace(diff.rotation) - 1.0) / 2.0)))
    return float(np.linalg.norm(diff.translation)), math.degrees(angle)


@pytest.fixture
def offset_pose():
    return planar_offset


@pytest.fixture
def errors_between():
    return pose_errors


@pytest.fixture
def room_factory():
    return make_room

import math

import numpy as np
import pytest

from monolocapi.cloudgen import back_project, to_body_frame
from monolocapi.datastructures import DepthFrame
from monolocapi.geom import Pose, rotation_log
from monolocapi.simulator import (
    Box,
    Cylinder,
    Rectangle,
    SensorNoise,
    SyntheticWorld,
    TrajectorySpec,
    Waypoint,
    build_world,
    create_primitive_from_json,
    create_trajectory_spec_from_json,
    create_world_from_json,
    default_extrinsics,
    default_intrinsics,
    garage_pass,
    garage_world,
    mechanization_check,
    render_depth,
    sample_trajectory,
    simulate,
    street_pass,
    street_world,
    world_preset
)
from monolocapi.utils import DataNotAsExpected, TrajectoryOutOfBounds


def facing_wall(transients=()):
    """Floor from x = -2 to the wall at x = 8."""
    primitives = [Rectangle((-2.0, -10.0, 0.0), (10.0, 0.0, 0.0), (0.0, 20.0, 0.0), "floor"),
                  Rectangle((8.0, -10.0, 0.0), (0.0, 20.0, 0.0), (0.0, 0.0, 6.0), "wall")]
    return SyntheticWorld("test", primitives, (-2.0, -10.0, 8.0, 10.0), list(transients), density=1.0)


def test_plane_sampling_count_and_height():
    world = SyntheticWorld("test", [Rectangle((0, 0, 0), (10, 0, 0), (0, 10, 0), "floor")], (0, 0, 10, 10), density=1.0)
    world_map = build_world(world)
    assert len(world_map.cloud) == 100
    assert np.all(world_map.cloud.points[:, 2] == 0.0)
    assert world_map.label_counts() == {"floor": 100}


def test_garage_sampling_is_uniform_over_area():
    world_map = build_world(garage_world(density=10.0))
    counts = world_map.label_counts()
    assert counts["floor"] == 60 * 20 * 10
    assert counts["wall"] == round(2 * (60 + 20) * 3 * 10)
    assert counts["pillar"] == 8 * round(0.6 * 3 * 10) * 4
    assert "vehicle" not in counts
    floor = world_map.points_of("floor")
    near_half = np.mean(floor[:, 0] < 20.0)
    assert near_half == pytest.approx(0.5, abs=0.02)


def test_sampling_is_deterministic():
    first = build_world(garage_world(seed=3, density=5.0))
    second = build_world(garage_world(seed=3, density=5.0))
    other = build_world(garage_world(seed=4, density=5.0))
    np.testing.assert_array_equal(first.cloud.points, second.cloud.points)
    assert not np.array_equal(first.cloud.points, other.cloud.points)


def test_wall_ahead_renders_its_distance():
    world = SyntheticWorld("test", [Rectangle((5.5, -10.0, 0.0), (0.0, 20.0, 0.0), (0.0, 0.0, 5.0), "wall")],
                           (-1.0, -10.0, 5.0, 10.0))
    depth, mask = render_depth(world, Pose.identity(), default_intrinsics(), default_extrinsics())
    assert depth.shape == (120, 160)
    assert depth[60, 80] == pytest.approx(5.0)
    hits = depth > 0
    np.testing.assert_allclose(depth[hits], 5.0)
    # rays pointing below the wall foot miss
    assert not hits[-1].any()
    assert not mask.any()


def test_cylinder_hit_distance():
    pole = Cylinder((5.0, 0.0), 0.5, 0.0, 3.0)
    t = pole.intersect(np.array([0.0, 0.0, 1.0]), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]))
    assert t[0] == pytest.approx(4.5)
    assert t[1] == np.inf
    # passes above the pole top
    assert t[2] == np.inf


def test_transients_are_masked_but_not_mapped():
    world = facing_wall([Box((4.0, 0.0), (1.0, 1.0, 2.0), label="vehicle")])
    depth, mask = render_depth(world, Pose.identity(), default_intrinsics(), default_extrinsics())
    assert mask[60, 80] == 1
    # front face at x = 3.5, camera at x = 0.5
    assert depth[60, 80] == pytest.approx(3.0)
    assert "vehicle" not in build_world(world).label_names


def test_back_projection_lands_on_surfaces():
    world = facing_wall()
    pose = Pose(np.eye(3), np.array([1.0, 0.5, 0.0]))
    intrinsics = default_intrinsics()
    depth, _ = render_depth(world, pose, intrinsics, default_extrinsics())
    frame = DepthFrame(depth, np.ones_like(depth), np.zeros(depth.shape), intrinsics)
    points = pose.apply(to_body_frame(back_project(frame), default_extrinsics()).points)
    assert len(points) == depth.size
    distance = np.minimum(np.abs(points[:, 2]), np.abs(points[:, 0] - 8.0))
    assert np.max(distance) < 1e-6


def test_primitive_json_is_validated():
    box = create_primitive_from_json({"type": "box", "center": [1, 2], "size": [1, 1, 1], "yaw": 30})
    assert isinstance(box, Box) and box.yaw_deg == 30.0
    with pytest.raises(DataNotAsExpected):
        create_primitive_from_json({"type": "sphere"})
    with pytest.raises(DataNotAsExpected):
        create_primitive_from_json({"type": "rectangle", "origin": [0, 0, 0], "edge_a": [1, 0, 0]})
    with pytest.raises(DataNotAsExpected):
        create_primitive_from_json({"type": "rectangle", "origin": [0, 0, 0], "edge_a": [1, 0, 0],
                                    "edge_b": [1, 1, 0]})
    with pytest.raises(DataNotAsExpected):
        create_primitive_from_json({"type": "cylinder", "center": [0, 0, 0], "radius": 1, "height": 2})


def test_world_json():
    world = create_world_from_json({
        "kind": "yard", "bounds": [0, 0, 10, 10], "density": 2,
        "primitives": [{"type": "rectangle", "origin": [0, 0, 0], "edge_a": [10, 0, 0], "edge_b": [0, 10, 0]}],
    }, seed=7)
    assert world.kind == "yard" and world.seed == 7
    assert len(build_world(world).cloud) == 200
    with pytest.raises(DataNotAsExpected):
        create_world_from_json({"kind": "yard", "bounds": [10, 0, 0, 10], "primitives": []})
    with pytest.raises(DataNotAsExpected):
        world_preset("moon")


def test_trajectory_json():
    spec = create_trajectory_spec_from_json({
        "waypoints": [{"position": [0, 0, 0], "heading": 0, "speed": 1},
                      {"position": [10, 0, 0], "heading": 0, "speed": 1}],
        "noise": "mems", "imu_rate": 200,
    })
    assert spec.imu_rate == 200.0
    assert spec.noise == SensorNoise.mems()
    with pytest.raises(DataNotAsExpected):
        create_trajectory_spec_from_json({"waypoints": [{"position": [0, 0, 0], "heading": 0, "speed": 1}]})
    with pytest.raises(DataNotAsExpected):
        create_trajectory_spec_from_json({"waypoints": [{"position": [0, 0], "heading": 0, "speed": 1}] * 2})


def test_trajectory_follows_waypoint_speeds():
    truth = sample_trajectory(garage_pass(speed=2.0))
    assert truth.times[-1] == pytest.approx(25.0)
    speeds = np.linalg.norm(np.diff(truth.positions, axis=0), axis=1) * 100.0
    np.testing.assert_allclose(speeds, 2.0, atol=1e-9)
    np.testing.assert_allclose(truth.initial_velocity, [2.0, 0.0, 0.0], atol=1e-12)


def test_garage_pass_stream_sizes():
    dataset = simulate(garage_world(), garage_pass())
    assert len(dataset.frames) == 250
    assert len(dataset.imu) == 2501
    assert len(dataset.odo) == 401
    assert dataset.frames[1].timestamp == pytest.approx(0.1)
    assert len(dataset.ground_truth) == 2501
    frame = dataset.frames[5].load()
    assert frame.timestamp == dataset.frames[5].timestamp
    valid = frame.depth > 0
    np.testing.assert_allclose(frame.confidence[valid], 0.95)
    assert np.all(frame.confidence[~valid] == 0.0)


def test_mechanization_replays_a_curved_drive():
    dataset = simulate(street_world(), street_pass())
    states = mechanization_check(dataset)
    gt = dataset.ground_truth
    assert len(states) == len(gt)
    positions = np.array([s.position for s in states])
    np.testing.assert_allclose(positions, gt.positions, atol=1e-6)
    # the lane change makes the heading vary
    assert np.ptp(gt.angles[:, 2]) > 5.0
    last = states[-1].pose().rotation
    assert math.degrees(np.linalg.norm(rotation_log(last.T @ gt.pose(len(gt) - 1).rotation))) < 1e-6


@pytest.mark.slow
def test_mechanization_replays_a_five_minute_drive():
    slow_lane_change = TrajectorySpec([Waypoint((-10.0, -2.0, 0.0), 0.0, 0.5),
                                       Waypoint((60.0, -2.0, 0.0), 0.0, 0.4),
                                       Waypoint((130.0, 2.0, 0.0), 0.0, 0.5)], frame_rate=0.01)
    dataset = simulate(street_world(), slow_lane_change)
    gt = dataset.ground_truth
    assert gt.times[-1] >= 300.0
    states = mechanization_check(dataset)
    positions = np.array([s.position for s in states])
    np.testing.assert_allclose(positions, gt.positions, rtol=0.0, atol=1e-6)


def test_noise_is_seeded():
    world = garage_world()
    noisy = simulate(world, garage_pass(noise=SensorNoise.mems()), seed=1)
    again = simulate(world, garage_pass(noise=SensorNoise.mems()), seed=1)
    clean = simulate(world, garage_pass())
    np.testing.assert_array_equal(noisy.imu[10].f, again.imu[10].f)
    assert not np.allclose(noisy.imu[10].f, clean.imu[10].f)
    np.testing.assert_array_equal(noisy.frames[3].load().depth, again.frames[3].load().depth)


def test_leaving_the_world_is_refused():
    with pytest.raises(TrajectoryOutOfBounds):
        simulate(garage_world(), street_pass())

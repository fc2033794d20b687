"""Synthetic worlds, trajectories and sensor streams.

Worlds are built from rectangles, boxes and vertical cylinders. Map clouds are sampled
from their surfaces, depth frames are ray-cast against them. The IMU stream is the exact
inverse of the discrete mechanization, so replaying it reproduces the ground truth.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .dataset import DEFAULT_RATES, Dataset
from .datastructures import (
    GRAVITY,
    LOCAL_FRAME,
    CameraIntrinsics,
    DepthFrame,
    ExtrinsicCalibration,
    FrameRecord,
    ImuSample,
    NavState,
    OdoSample,
    PointCloud,
    PoseSeries
)
from .geom import EulerZYX, Pose, euler_to_rotation, quat_from_matrix, rotation_log
from .mapstore import write_tile_store
from .utils import DataNotAsExpected, TrajectoryOutOfBounds, complainIfKeysAreNotInDict, complainIfNotAList, write_points

logger = logging.getLogger(__name__)

GARAGE = "garage"
STREET = "street"
PRESETS = (GARAGE, STREET)

RAY_EPSILON = 1e-9
DEG_PER_HOUR = math.pi / 180.0 / 3600.0
MICRO_G = 1e-6 * 9.80665


# ------------------ Surfaces ------------------

@dataclass(frozen=True, eq=False)
class Rectangle:
    """Planar rectangle origin + u * edge_a + v * edge_b, u, v in [0, 1]; edges perpendicular."""
    origin: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    label: str = "plane"

    def __post_init__(self):
        for name in ("origin", "edge_a", "edge_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        la, lb = np.linalg.norm(self.edge_a), np.linalg.norm(self.edge_b)
        if la <= 0 or lb <= 0:
            raise DataNotAsExpected(f"Rectangle '{self.label}' has a zero-length edge.")
        if abs(self.edge_a @ self.edge_b) > 1e-9 * la * lb:
            raise DataNotAsExpected(f"Rectangle '{self.label}' edges are not perpendicular.")

    def surfaces(self) -> List["Rectangle"]:
        return [self]

    def area(self) -> float:
        return float(np.linalg.norm(self.edge_a) * np.linalg.norm(self.edge_b))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        uv = rng.random((count, 2))
        return self.origin + uv[:, :1] * self.edge_a + uv[:, 1:] * self.edge_b

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Ray parameter of the hit for every direction, inf where the ray misses."""
        normal = np.cross(self.edge_a, self.edge_b)
        denom = directions @ normal
        with np.errstate(divide='ignore', invalid='ignore'):
            t = ((self.origin - origin) @ normal) / denom
            offset = origin + t[:, None] * directions - self.origin
            u = offset @ self.edge_a / (self.edge_a @ self.edge_a)
            v = offset @ self.edge_b / (self.edge_b @ self.edge_b)
        hit = (denom != 0) & (t > RAY_EPSILON) & (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Vertical cylinder mantle."""
    center: Tuple[float, float]
    radius: float
    z0: float
    height: float
    label: str = "pole"

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise DataNotAsExpected(f"Cylinder '{self.label}' needs positive radius and height.")

    def surfaces(self) -> List["Cylinder"]:
        return [self]

    def area(self) -> float:
        return 2.0 * math.pi * self.radius * self.height

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        angle = rng.random(count) * 2.0 * math.pi
        z = self.z0 + rng.random(count) * self.height
        return np.column_stack([self.center[0] + self.radius * np.cos(angle),
                                self.center[1] + self.radius * np.sin(angle), z])

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        ox, oy = origin[0] - self.center[0], origin[1] - self.center[1]
        dx, dy = directions[:, 0], directions[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4.0 * a * c
        result = np.full(len(directions), np.inf)
        with np.errstate(divide='ignore', invalid='ignore'):
            root = np.sqrt(np.where(disc >= 0, disc, 0.0))
            for t in ((-b - root) / (2.0 * a), (-b + root) / (2.0 * a)):
                z = origin[2] + t * directions[:, 2]
                hit = ((a > 0) & (disc >= 0) & (t > RAY_EPSILON)
                       & (z >= self.z0) & (z <= self.z0 + self.height) & (t < result))
                result = np.where(hit, t, result)
        return result


@dataclass(frozen=True, eq=False)
class Box:
    """Box standing on z0, rotated by yaw about its vertical axis; the bottom is never sampled."""
    center: Tuple[float, float]
    size: Tuple[float, float, float]
    z0: float = 0.0
    yaw_deg: float = 0.0
    top: bool = True
    label: str = "box"

    def __post_init__(self):
        if min(self.size) <= 0:
            raise DataNotAsExpected(f"Box '{self.label}' needs positive extents.")

    def surfaces(self) -> List[Rectangle]:
        sx, sy, sz = self.size
        rotation = euler_to_rotation(EulerZYX(yaw=math.radians(self.yaw_deg)))
        ex, ey, ez = rotation[:, 0] * sx, rotation[:, 1] * sy, np.array([0.0, 0.0, sz])
        corner = np.array([self.center[0], self.center[1], self.z0]) - 0.5 * ex - 0.5 * ey
        faces = [
            Rectangle(corner, ex, ez, self.label),
            Rectangle(corner + ey, ex, ez, self.label),
            Rectangle(corner, ey, ez, self.label),
            Rectangle(corner + ex, ey, ez, self.label),
        ]
        if self.top:
            faces.append(Rectangle(corner + ez, ex, ey, self.label))
        return faces

    def area(self) -> float:
        return sum(s.area() for s in self.surfaces())


# ------------------ Worlds ------------------

@dataclass(eq=False)
class SyntheticWorld:
    """Static primitives (in the map) and transient ones (rendered and masked only)."""
    kind: str
    primitives: list
    bounds: Tuple[float, float, float, float]  # (x_min, y_min, x_max, y_max)
    transients: list = field(default_factory=list)
    density: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.density <= 0:
            raise DataNotAsExpected("Sampling density must be positive.")
        x_min, y_min, x_max, y_max = self.bounds
        if not (x_min < x_max and y_min < y_max):
            raise DataNotAsExpected(f"Degenerate world bounds {self.bounds}.")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        x_min, y_min, x_max, y_max = self.bounds
        return (xy[:, 0] >= x_min) & (xy[:, 0] <= x_max) & (xy[:, 1] >= y_min) & (xy[:, 1] <= y_max)


@dataclass(eq=False)
class WorldMap:
    """Sampled map cloud with one primitive label per point."""
    cloud: PointCloud
    labels: np.ndarray
    label_names: List[str]

    def label_counts(self) -> dict:
        return {name: int(np.count_nonzero(self.labels == i)) for i, name in enumerate(self.label_names)}

    def points_of(self, *names: str) -> np.ndarray:
        ids = [self.label_names.index(n) for n in names if n in self.label_names]
        return self.cloud.points[np.isin(self.labels, ids)]


def build_world(world: SyntheticWorld) -> WorldMap:
    """Samples every static surface with round(area * density) uniform points."""
    rng = np.random.default_rng(world.seed)
    names: List[str] = []
    chunks, labels = [], []
    for primitive in world.primitives:
        if primitive.label not in names:
            names.append(primitive.label)
        for surface in primitive.surfaces():
            count = int(round(surface.area() * world.density))
            chunks.append(surface.sample(rng, count))
            labels.append(np.full(count, names.index(primitive.label), dtype=np.int32))
    points = np.vstack(chunks) if chunks else np.zeros((0, 3))
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int32)
    logger.info("World '%s': %d map points.", world.kind, len(points))
    return WorldMap(PointCloud(points, LOCAL_FRAME), labels, names)


def garage_world(seed: int = 0, density: float = 100.0, transients: bool = True) -> SyntheticWorld:
    """Parking garage: floor, four walls, eight pillars and two parked vehicles."""
    height = 3.0
    primitives = [Rectangle((-10.0, -10.0, 0.0), (60.0, 0.0, 0.0), (0.0, 20.0, 0.0), "floor")]
    primitives += [
        Rectangle((-10.0, -10.0, 0.0), (60.0, 0.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((-10.0, 10.0, 0.0), (60.0, 0.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((-10.0, -10.0, 0.0), (0.0, 20.0, 0.0), (0.0, 0.0, height), "wall"),
        Rectangle((50.0, -10.0, 0.0), (0.0, 20.0, 0.0), (0.0, 0.0, height), "wall"),
    ]
    primitives += [Box((x, y), (0.6, 0.6, height), top=False, label="pillar")
                   for x in (5.0, 15.0, 25.0, 35.0) for y in (-4.0, 4.0)]
    vehicles = [Box((10.0, -7.0), (4.5, 1.8, 1.5), label="vehicle"),
                Box((30.0, 7.0), (4.5, 1.8, 1.5), label="vehicle")] if transients else []
    return SyntheticWorld(GARAGE, primitives, (-10.0, -10.0, 50.0, 10.0), vehicles, density, seed)


def street_world(seed: int = 0, density: float = 20.0, transients: bool = True) -> SyntheticWorld:
    """Street block: ground, building facades with side returns and light poles."""
    primitives = [Rectangle((-20.0, -20.0, 0.0), (160.0, 0.0, 0.0), (0.0, 40.0, 0.0), "ground")]
    north = [(-20.0, 0.0, 12.0, 10.0), (2.0, 25.0, 13.5, 14.0), (28.0, 50.0, 12.5, 9.0),
             (55.0, 80.0, 14.0, 12.0), (83.0, 105.0, 12.0, 15.0), (110.0, 140.0, 13.0, 10.0)]
    south = [(-20.0, 10.0, -13.0, 11.0), (14.0, 36.0, -12.0, 9.0), (40.0, 62.0, -14.5, 13.0),
             (66.0, 95.0, -12.5, 10.0), (99.0, 121.0, -13.5, 12.0), (124.0, 140.0, -12.0, 9.0)]
    for x0, x1, y, h in north + south:
        depth = 4.0 if y > 0 else -4.0
        primitives.append(Rectangle((x0, y, 0.0), (x1 - x0, 0.0, 0.0), (0.0, 0.0, h), "facade"))
        primitives.append(Rectangle((x0, y, 0.0), (0.0, depth, 0.0), (0.0, 0.0, h), "facade"))
        primitives.append(Rectangle((x1, y, 0.0), (0.0, depth, 0.0), (0.0, 0.0, h), "facade"))
    primitives += [Cylinder((x, y), 0.15, 0.0, 6.0, "pole")
                   for x in np.arange(-10.0, 131.0, 12.0) for y in (-9.0, 9.0)]
    vehicles = [Box((25.0, -5.0), (4.5, 1.8, 1.5), label="vehicle"),
                Box((70.0, 5.0), (4.5, 1.8, 1.5), label="vehicle")] if transients else []
    return SyntheticWorld(STREET, primitives, (-20.0, -20.0, 140.0, 20.0), vehicles, density, seed)


def create_primitive_from_json(item: dict):
    """Creates a rectangle, box or cylinder from its JSON description."""
    complainIfKeysAreNotInDict(item, ["type"])
    kind = item["type"]
    label = item.get("label", kind)
    if kind == "rectangle":
        complainIfKeysAreNotInDict(item, ["origin", "edge_a", "edge_b"])
        for key in ("origin", "edge_a", "edge_b"):
            complainIfNotAList(item[key], 3)
        return Rectangle(item["origin"], item["edge_a"], item["edge_b"], label)
    if kind == "box":
        complainIfKeysAreNotInDict(item, ["center", "size"])
        complainIfNotAList(item["center"], 2)
        complainIfNotAList(item["size"], 3)
        return Box(tuple(item["center"]), tuple(item["size"]), float(item.get("z0", 0.0)),
                   float(item.get("yaw", 0.0)), bool(item.get("top", True)), label)
    if kind == "cylinder":
        complainIfKeysAreNotInDict(item, ["center", "radius", "height"])
        complainIfNotAList(item["center"], 2)
        return Cylinder(tuple(item["center"]), float(item["radius"]), float(item.get("z0", 0.0)),
                        float(item["height"]), label)
    raise DataNotAsExpected(f"Unknown primitive type '{kind}'.")


def create_world_from_json(item: dict, seed: int = 0) -> SyntheticWorld:
    """Creates a SyntheticWorld from a world file.

    The file holds "kind", "bounds" [x_min, y_min, x_max, y_max], "primitives" and optionally
    "transients" and "density".
    """
    complainIfKeysAreNotInDict(item, ["kind", "bounds", "primitives"])
    complainIfNotAList(item["bounds"], 4)
    complainIfNotAList(item["primitives"])
    return SyntheticWorld(item["kind"],
                          [create_primitive_from_json(p) for p in item["primitives"]],
                          tuple(float(v) for v in item["bounds"]),
                          [create_primitive_from_json(p) for p in item.get("transients", [])],
                          float(item.get("density", 100.0)),
                          int(item.get("seed", seed)))


def world_preset(name: str, seed: int = 0, density: Optional[float] = None) -> SyntheticWorld:
    if name == GARAGE:
        return garage_world(seed, density or 100.0)
    if name == STREET:
        return street_world(seed, density or 20.0)
    raise DataNotAsExpected(f"Unknown world preset '{name}'. Use one of {', '.join(PRESETS)}.")


def save_world_map(world: SyntheticWorld, out_path: str, tile_size: float = 50.0) -> str:
    """Writes the map of a world: a point file for the garage, a tile store for the street."""
    world_map = build_world(world)
    if world.kind == STREET:
        write_tile_store(world_map.cloud.points, tile_size, out_path)
        return out_path
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_points(out_path, world_map.cloud.points)
    return out_path


# ------------------ Camera ------------------

def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=80.0, cy=60.0, width=160, height=120, f_canonical=50.0)


def default_extrinsics() -> ExtrinsicCalibration:
    """Forward-looking camera 0.5 m ahead of and 1.2 m above the body origin."""
    rotation = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return ExtrinsicCalibration(rotation, np.array([0.5, 0.0, 1.2]))


def camera_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Row-major camera-frame ray directions with unit z component."""
    v, u = np.mgrid[0:intrinsics.height, 0:intrinsics.width]
    return np.column_stack([((u - intrinsics.cx) / intrinsics.fx).ravel(),
                            ((v - intrinsics.cy) / intrinsics.fy).ravel(),
                            np.ones(u.size)])


def render_depth(world: SyntheticWorld, body_pose: Pose, intrinsics: CameraIntrinsics,
                 calib: ExtrinsicCalibration) -> Tuple[np.ndarray, np.ndarray]:
    """Noise-free metric depth raster and transient-object mask for a body pose.

    Depth equals the camera-frame z of the first hit; pixels without a hit get 0.
    """
    camera = body_pose.compose(calib.as_pose())
    directions = camera_rays(intrinsics) @ camera.rotation.T
    nearest = np.full(len(directions), np.inf)
    transient = np.zeros(len(directions), dtype=bool)
    for group, is_transient in ((world.primitives, False), (world.transients, True)):
        for primitive in group:
            for surface in primitive.surfaces():
                t = surface.intersect(camera.translation, directions)
                closer = t < nearest
                nearest = np.where(closer, t, nearest)
                transient = np.where(closer, is_transient, transient)
    shape = (intrinsics.height, intrinsics.width)
    depth = np.where(np.isfinite(nearest), nearest, 0.0).reshape(shape)
    return depth, (transient & np.isfinite(nearest)).reshape(shape).astype(np.uint8)


# ------------------ Trajectories ------------------

@dataclass(frozen=True, eq=False)
class Waypoint:
    position: np.ndarray
    heading_deg: float  # counter-clockwise from East
    speed: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        if self.speed < 0:
            raise DataNotAsExpected("Waypoint speeds must be non-negative.")


@dataclass
class SensorNoise:
    """Sensor error model. Densities are continuous; per-sample sigma = density * sqrt(rate)."""
    gyro_density: float = 0.0      # deg/s/sqrt(Hz)
    accel_density: float = 0.0     # micro-g/sqrt(Hz)
    gyro_bias: float = 0.0         # deg/h, 1-sigma per axis
    accel_bias: float = 0.0        # milli-g, 1-sigma per axis
    odo_std: float = 0.0           # m/s
    depth_rel_std: float = 0.0     # fraction of range
    low_confidence_fraction: float = 0.0
    depth_scale: float = 1.0       # multiplicative depth error undone by the cloudgen scale

    @staticmethod
    def mems() -> "SensorNoise":
        return SensorNoise(gyro_density=0.01, accel_density=100.0, gyro_bias=10.0, accel_bias=1.0,
                           odo_std=0.1, depth_rel_std=0.02, low_confidence_fraction=0.05)

    def is_zero(self) -> bool:
        return (self.gyro_density == 0 and self.accel_density == 0 and self.gyro_bias == 0
                and self.accel_bias == 0 and self.odo_std == 0)


@dataclass
class TrajectorySpec:
    waypoints: List[Waypoint]
    imu_rate: float = DEFAULT_RATES["imu"]
    frame_rate: float = DEFAULT_RATES["frame"]
    odo_rate: float = DEFAULT_RATES["odo"]
    noise: SensorNoise = field(default_factory=SensorNoise)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    extrinsics: ExtrinsicCalibration = field(default_factory=default_extrinsics)

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise DataNotAsExpected("A trajectory needs at least two waypoints.")
        if min(self.imu_rate, self.frame_rate, self.odo_rate) <= 0:
            raise DataNotAsExpected("Sensor rates must be positive.")


def create_trajectory_spec_from_json(item: dict) -> TrajectorySpec:
    """Creates a TrajectorySpec from a trajectory file.

    The file holds "waypoints" ([{"position": [x, y, z], "heading": deg, "speed": m/s}]),
    optional rates and either a "noise" object or "noise": "mems".
    """
    complainIfKeysAreNotInDict(item, ["waypoints"])
    complainIfNotAList(item["waypoints"])
    waypoints = []
    for wp in item["waypoints"]:
        complainIfKeysAreNotInDict(wp, ["position", "heading", "speed"])
        complainIfNotAList(wp["position"], 3)
        waypoints.append(Waypoint(np.array(wp["position"], dtype=float), float(wp["heading"]), float(wp["speed"])))
    noise = item.get("noise", {})
    if noise == "mems":
        noise = SensorNoise.mems()
    elif isinstance(noise, dict):
        noise = SensorNoise(**noise)
    else:
        raise DataNotAsExpected(f"Unknown noise model {noise!r}.")
    return TrajectorySpec(waypoints,
                          imu_rate=float(item.get("imu_rate", DEFAULT_RATES["imu"])),
                          frame_rate=float(item.get("frame_rate", DEFAULT_RATES["frame"])),
                          odo_rate=float(item.get("odo_rate", DEFAULT_RATES["odo"])),
                          noise=noise)


def garage_pass(speed: float = 2.0, noise: Optional[SensorNoise] = None) -> TrajectorySpec:
    """Straight 50 m pass along the garage aisle."""
    return TrajectorySpec([Waypoint((-5.0, 0.0, 0.0), 0.0, speed), Waypoint((45.0, 0.0, 0.0), 0.0, speed)],
                          noise=noise or SensorNoise())


def street_pass(speed: float = 8.0, noise: Optional[SensorNoise] = None) -> TrajectorySpec:
    """Drive along the street with a lane change."""
    return TrajectorySpec([Waypoint((-10.0, -2.0, 0.0), 0.0, speed),
                           Waypoint((50.0, -2.0, 0.0), 0.0, speed),
                           Waypoint((70.0, 2.0, 0.0), 0.0, speed),
                           Waypoint((130.0, 2.0, 0.0), 0.0, speed)],
                          noise=noise or SensorNoise())


def trajectory_preset(world_kind: str, noise: Optional[SensorNoise] = None) -> TrajectorySpec:
    return street_pass(noise=noise) if world_kind == STREET else garage_pass(noise=noise)


@dataclass(eq=False)
class SampledTrajectory:
    """Ground-truth states on the IMU time grid."""
    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    initial_velocity: np.ndarray


def sample_trajectory(traj: TrajectorySpec) -> SampledTrajectory:
    """Hermite path through the waypoints, traversed with constant acceleration per segment."""
    positions = np.array([wp.position for wp in traj.waypoints])
    chords = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    if np.any(chords <= 0):
        raise DataNotAsExpected("Consecutive waypoints must differ.")
    s_knots = np.concatenate([[0.0], np.cumsum(chords)])
    headings = np.radians([wp.heading_deg for wp in traj.waypoints])
    slopes = np.gradient(positions[:, 2], s_knots)
    tangents = np.column_stack([np.cos(headings), np.sin(headings), slopes])
    path = CubicHermiteSpline(s_knots, positions, tangents, axis=0)
    direction = path.derivative()

    speeds = np.array([wp.speed for wp in traj.waypoints])
    if np.any(speeds[:-1] + speeds[1:] <= 0):
        raise DataNotAsExpected("The vehicle cannot stand still over a whole segment.")
    durations = 2.0 * chords / (speeds[:-1] + speeds[1:])
    t_knots = np.concatenate([[0.0], np.cumsum(durations)])
    accelerations = (speeds[1:] - speeds[:-1]) / durations

    count = int(math.floor(t_knots[-1] * traj.imu_rate + 1e-9)) + 1
    times = np.arange(count) / traj.imu_rate
    segment = np.clip(np.searchsorted(t_knots, times, side='right') - 1, 0, len(chords) - 1)
    tau = times - t_knots[segment]
    s = s_knots[segment] + speeds[segment] * tau + 0.5 * accelerations[segment] * tau ** 2
    s = np.minimum(s, s_knots[-1])

    sampled = path(s)
    d = direction(s)
    yaw = np.arctan2(d[:, 1], d[:, 0])
    pitch = -np.arctan2(d[:, 2], np.hypot(d[:, 0], d[:, 1]))
    rotations = np.array([euler_to_rotation(EulerZYX(yaw=y, pitch=p)) for y, p in zip(yaw, pitch)])
    initial_velocity = direction(0.0) * speeds[0]
    return SampledTrajectory(times, sampled, rotations, initial_velocity)


def synthesize_imu(truth: SampledTrajectory) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noise-free specific force and angular rate that mechanization turns back into the truth.

    Returns:
    (f, omega, velocities): f and omega per sample (the last one repeats its predecessor);
    velocities v_k as mechanization produces them.
    """
    dt = np.diff(truth.times)
    n = len(truth.times)
    velocities = np.empty((n, 3))
    velocities[0] = truth.initial_velocity
    velocities[1:] = np.diff(truth.positions, axis=0) / dt[:, None]
    f = np.empty((n, 3))
    omega = np.empty((n, 3))
    for k in range(n - 1):
        accel = (velocities[k + 1] - velocities[k]) / dt[k]
        f[k] = truth.rotations[k].T @ (accel - GRAVITY)
        omega[k] = rotation_log(truth.rotations[k].T @ truth.rotations[k + 1]) / dt[k]
    f[-1], omega[-1] = f[-2], omega[-2]
    return f, omega, velocities


def _render_frame(world: SyntheticWorld, traj: TrajectorySpec, pose: Pose, timestamp: float,
                  seed: int, epoch: int) -> DepthFrame:
    noise = traj.noise
    intrinsics = traj.intrinsics
    depth, mask = render_depth(world, pose, intrinsics, traj.extrinsics)
    rng = np.random.default_rng([seed, epoch])
    valid = depth > 0
    low = valid & (rng.random(depth.shape) < noise.low_confidence_fraction)
    rel = np.where(low, 5.0 * noise.depth_rel_std, noise.depth_rel_std)
    noisy = np.maximum(depth * (1.0 + rel * rng.standard_normal(depth.shape)), 0.0)
    confidence = np.where(valid, np.where(low, rng.uniform(0.3, 0.7, depth.shape), 0.95), 0.0)
    canonical = noisy * noise.depth_scale * intrinsics.f_canonical / intrinsics.fx
    return DepthFrame(canonical, confidence, mask, intrinsics, timestamp)


def simulate(world: SyntheticWorld, traj: TrajectorySpec, seed: int = 0) -> Dataset:
    """Generates IMU, odometer, depth frames and ground truth for a drive through a world.

    Depth frames are rendered lazily when loaded; each frame has its own noise stream.

    Raises:
    - TrajectoryOutOfBounds: If the path leaves the world bounds.
    """
    truth = sample_trajectory(traj)
    outside = ~world.contains(truth.positions[:, :2])
    if outside.any():
        first = truth.positions[np.argmax(outside)]
        raise TrajectoryOutOfBounds(f"Trajectory leaves the world at ({first[0]:.1f}, {first[1]:.1f}).")

    f, omega, velocities = synthesize_imu(truth)
    rng = np.random.default_rng(seed)
    noise = traj.noise
    if not noise.is_zero():
        sigma_f = noise.accel_density * MICRO_G * math.sqrt(traj.imu_rate)
        sigma_w = math.radians(noise.gyro_density) * math.sqrt(traj.imu_rate)
        bias_f = rng.normal(0.0, noise.accel_bias * 1e-3 * 9.80665, 3)
        bias_w = rng.normal(0.0, noise.gyro_bias * DEG_PER_HOUR, 3)
        f = f + bias_f + sigma_f * rng.standard_normal(f.shape)
        omega = omega + bias_w + sigma_w * rng.standard_normal(omega.shape)
    imu = [ImuSample(float(t), f[k], omega[k]) for k, t in enumerate(truth.times)]

    duration = truth.times[-1]
    odo_times = np.arange(int(math.floor(duration * traj.odo_rate + 1e-9)) + 1) / traj.odo_rate
    interval = np.clip(np.searchsorted(truth.times, odo_times, side='right') - 1, 0, len(truth.times) - 2)
    speeds = np.linalg.norm(velocities[interval + 1], axis=1) + noise.odo_std * rng.standard_normal(len(odo_times))
    odo = [OdoSample(float(t), float(v)) for t, v in zip(odo_times, speeds)]

    poses = [Pose(r, p) for r, p in zip(truth.rotations, truth.positions)]
    frames = []
    frame_count = int(math.floor(duration * traj.frame_rate + 1e-9))
    for epoch in range(frame_count):
        k = int(round(epoch / traj.frame_rate * traj.imu_rate))
        loader = functools.partial(_render_frame, world, traj, poses[k], float(truth.times[k]), seed, epoch)
        frames.append(FrameRecord(epoch, float(truth.times[k]), loader))

    initial_state = NavState(quat_from_matrix(truth.rotations[0]), truth.initial_velocity,
                             truth.positions[0], time=float(truth.times[0]))
    logger.info("Simulated %.1f s: %d IMU, %d odometer samples, %d frames.",
                duration, len(imu), len(odo), len(frames))
    return Dataset(traj.intrinsics, traj.extrinsics, imu, odo, frames,
                   PoseSeries.from_poses(truth.times, poses), initial_state,
                   {"imu": traj.imu_rate, "frame": traj.frame_rate, "odo": traj.odo_rate})


def mechanization_check(dataset: Dataset, max_dt: float = 0.1) -> Sequence[NavState]:
    """Replays the IMU stream from the initial state; used to verify generated datasets."""
    from .fusion import mechanize
    states = [dataset.initial_state]
    for previous, current in zip(dataset.imu[:-1], dataset.imu[1:]):
        states.append(mechanize(states[-1], previous, current.time - previous.time, max_dt))
    return states

"""Data structures used by the monoloc modules.

They hold the per-epoch sensor inputs, the point clouds flowing between the pipeline stages,
the navigation state and the configuration of every stage.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .geom import (
    EulerZYX,
    Pose,
    Quaternion,
    euler_to_rotation,
    is_rotation,
    pose_from_quaternion,
    quat_from_matrix,
    quat_to_matrix,
    rotation_to_euler
)
from .utils import DataNotAsExpected, complainIfKeysAreNotInDict, complainIfNotAList


# Frame tags of a PointCloud
CAMERA_FRAME = "camera"
BODY_FRAME = "body"
LOCAL_FRAME = "local-level"
FRAMES = (CAMERA_FRAME, BODY_FRAME, LOCAL_FRAME)

INDOOR = "indoor"
OUTDOOR = "outdoor"

GRAVITY = np.array([0.0, 0.0, -9.80665])


# Camera and depth frames

@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    f_canonical: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.f_canonical > 0):
            raise DataNotAsExpected("Focal lengths must be positive.")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataNotAsExpected(
                f"Principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image.")


@dataclass(frozen=True, eq=False)
class ExtrinsicCalibration:
    """Camera to body transform: p_body = rotation @ p_camera + translation."""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        if not is_rotation(rotation):
            raise DataNotAsExpected("Extrinsic rotation is not a proper rotation matrix.")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def as_pose(self) -> Pose:
        return Pose(self.rotation, self.translation)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Depth, confidence and transient-object mask rasters of one camera epoch."""
    depth: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        depth = np.asarray(self.depth, dtype=np.float64)
        confidence = np.asarray(self.confidence, dtype=np.float64)
        mask = np.asarray(self.mask).astype(np.uint8)
        for name, raster in (("depth", depth), ("confidence", confidence), ("mask", mask)):
            if raster.shape != shape:
                raise DataNotAsExpected(f"{name} raster is {raster.shape}, intrinsics say {shape}.")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise DataNotAsExpected("Depth values must be finite and non-negative.")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "confidence", confidence)
        object.__setattr__(self, "mask", mask)

    def with_depth(self, depth: np.ndarray) -> "DepthFrame":
        return DepthFrame(depth, self.confidence, self.mask, self.intrinsics, self.timestamp)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points in one frame, optionally with per-point 3x3 covariances."""
    points: np.ndarray
    frame: str = BODY_FRAME
    covariances: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise DataNotAsExpected("Point coordinates must be finite.")
        if self.frame not in FRAMES:
            raise DataNotAsExpected(f"Unknown frame tag '{self.frame}'.")
        object.__setattr__(self, "points", points)
        if self.covariances is not None:
            covariances = np.asarray(self.covariances, dtype=np.float64)
            if covariances.shape != (len(points), 3, 3):
                raise DataNotAsExpected(
                    f"Covariances have shape {covariances.shape}, expected ({len(points)}, 3, 3).")
            object.__setattr__(self, "covariances", covariances)

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray, frame: Optional[str] = None) -> "PointCloud":
        """Same frame (unless given), covariances dropped."""
        return PointCloud(points, frame or self.frame)

    @staticmethod
    def empty(frame: str = BODY_FRAME) -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), frame)


# Configuration of the pipeline stages

@dataclass
class CloudgenConfig:
    """Point cloud generation parameters."""
    confidence_threshold: float = 0.75
    dilation_kernel: int = 7
    voxel_size: float = 0.2
    d_max: float = 15.0
    h_max: float = 2.2
    scale: float = 1.0
    sor1_k: int = 6
    sor1_tau: float = 1.0
    sor2_k: int = 10
    sor2_tau: float = 2.0
    apply_masks: bool = True
    refine: bool = True

    def __post_init__(self):
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise DataNotAsExpected("confidence_threshold must lie in [0, 1].")
        if self.dilation_kernel < 1 or self.dilation_kernel % 2 == 0:
            raise DataNotAsExpected("dilation_kernel must be odd and >= 1.")
        if not (self.voxel_size > 0 and self.d_max > 0 and self.scale > 0):
            raise DataNotAsExpected("voxel_size, d_max and scale must be positive.")
        if self.sor1_k < 1 or self.sor2_k < 1 or self.sor1_tau < 0 or self.sor2_tau < 0:
            raise DataNotAsExpected("SOR needs k >= 1 and tau >= 0.")

    @staticmethod
    def for_mode(mode: str, **overrides) -> "CloudgenConfig":
        """Defaults for indoor (15 m / 2.2 m crop) or outdoor (30 m / no height crop)."""
        if mode == OUTDOOR:
            defaults = dict(d_max=30.0, h_max=math.inf)
        else:
            defaults = dict(d_max=15.0, h_max=2.2)
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return CloudgenConfig(**defaults)


@dataclass
class SplitConfig:
    """Ground / surround splitting by RANSAC plane fit."""
    inlier_distance: float = 0.15
    max_normal_angle_deg: float = 10.0
    iterations: int = 200
    seed: int = 0
    ceiling_height: float = 2.2
    min_inlier_ratio: float = 0.1


@dataclass
class GicpConfig:
    """Generalized-ICP parameters."""
    k_neighbors: int = 20
    max_correspondence_dist: float = 1.0
    max_iterations: int = 50
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-4
    plane_regularization: float = 1e-3

    def __post_init__(self):
        if self.k_neighbors < 3 or self.max_iterations < 1:
            raise DataNotAsExpected("GICP needs k_neighbors >= 3 and max_iterations >= 1.")
        if not (self.max_correspondence_dist > 0 and self.translation_epsilon > 0
                and self.rotation_epsilon > 0 and self.plane_regularization > 0):
            raise DataNotAsExpected("GICP distances, epsilons and regularization must be positive.")


@dataclass
class RegistrationConfig:
    """Indoor and outdoor registration flow parameters."""
    gicp: GicpConfig = field(default_factory=GicpConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    fitness_gate: float = 0.4
    rmse_gate: float = 1.0
    d_min: float = 1.0
    d_max_total: float = 10.0
    roi_extent: float = 100.0
    map_voxel: float = 0.2
    stage_voxel: float = 0.2
    aggregate: bool = True
    require_convergence: bool = False

    def __post_init__(self):
        if not self.d_min < self.d_max_total:
            raise DataNotAsExpected("d_min must be smaller than d_max_total.")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Outcome of a registration: the correction ΔT and its quality."""
    delta: Pose
    fitness: float
    rmse_inliers: float
    iterations: int
    converged: bool
    counts: Dict[str, int] = field(default_factory=dict)
    stages: Dict[str, Pose] = field(default_factory=dict)  # indoor: ground and planar corrections


# Navigation

@dataclass(frozen=True, eq=False)
class ImuSample:
    """Specific force (m/s^2) and angular rate (rad/s) in the body frame."""
    time: float
    f: np.ndarray
    omega: np.ndarray


@dataclass(frozen=True)
class OdoSample:
    """Forward speed from the odometer in m/s."""
    time: float
    speed: float


@dataclass(frozen=True, eq=False)
class NavState:
    """Nominal INS state, navigation frame ENU."""
    attitude: Quaternion = field(default_factory=Quaternion)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self):
        for name in ("velocity", "position", "bias_accel", "bias_gyro"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(value)):
                raise DataNotAsExpected(f"NavState {name} is not finite.")
            object.__setattr__(self, name, value)
        if abs(self.attitude.norm() - 1.0) > 1e-6:
            raise DataNotAsExpected("NavState attitude is not a unit quaternion.")

    def pose(self) -> Pose:
        return pose_from_quaternion(self.attitude, self.position)


STATE_SIZE = 15
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BIAS_F = slice(9, 12)
BIAS_W = slice(12, 15)


@dataclass(frozen=True, eq=False)
class ErrorState:
    """Error-state mean (δp, δv, δθ, δb_f, δb_ω) and its 15x15 covariance."""
    dx: np.ndarray = field(default_factory=lambda: np.zeros(STATE_SIZE))
    P: np.ndarray = field(default_factory=lambda: np.eye(STATE_SIZE))

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.float64).reshape(STATE_SIZE)
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (STATE_SIZE, STATE_SIZE):
            raise DataNotAsExpected(f"Covariance must be 15x15, got {P.shape}")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "P", P)

    @property
    def dp(self) -> np.ndarray:
        return self.dx[POS]

    @property
    def dv(self) -> np.ndarray:
        return self.dx[VEL]

    @property
    def dtheta(self) -> np.ndarray:
        return self.dx[ATT]

    @property
    def dbf(self) -> np.ndarray:
        return self.dx[BIAS_F]

    @property
    def dbw(self) -> np.ndarray:
        return self.dx[BIAS_W]

    def std_devs(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))


@dataclass
class NoiseConfig:
    """Process noise (per-sample standard deviations) and static measurement noise."""
    sigma_f: float = 9.80665e-3
    sigma_w: float = 1.7453e-3
    sigma_bf: float = 1e-4
    sigma_bw: float = 1e-5
    N_static_speed: np.ndarray = field(default_factory=lambda: np.diag([0.1 ** 2] * 3))
    N_static_pose: np.ndarray = field(
        default_factory=lambda: np.diag([0.1 ** 2] * 3 + [math.radians(0.5) ** 2] * 3))
    alpha: float = 0.5
    tune: bool = True

    def __post_init__(self):
        if min(self.sigma_f, self.sigma_w, self.sigma_bf, self.sigma_bw) <= 0:
            raise DataNotAsExpected("Noise densities must be positive.")
        self.N_static_speed = np.asarray(self.N_static_speed, dtype=np.float64)
        self.N_static_pose = np.asarray(self.N_static_pose, dtype=np.float64)
        if self.N_static_speed.shape != (3, 3) or self.N_static_pose.shape != (6, 6):
            raise DataNotAsExpected("Measurement noise matrices must be 3x3 and 6x6.")
        for name, matrix in (("N_static_speed", self.N_static_speed), ("N_static_pose", self.N_static_pose)):
            if not np.allclose(matrix, matrix.T) or np.min(np.linalg.eigvalsh(matrix)) <= 0:
                raise DataNotAsExpected(f"{name} must be symmetric positive definite.")
        if self.alpha < 0:
            raise DataNotAsExpected("alpha must be non-negative.")


@dataclass
class FilterConfig:
    """Epoch rate, integration limits and initial uncertainty of a fusion session."""
    epoch_rate: float = 10.0
    max_dt: float = 0.1
    init_pos_std: float = 0.1
    init_vel_std: float = 0.1
    init_att_std: float = math.radians(0.5)
    init_bias_f_std: float = 0.02
    init_bias_w_std: float = 1e-4

    def initial_covariance(self) -> np.ndarray:
        stds = np.concatenate([
            np.full(3, self.init_pos_std), np.full(3, self.init_vel_std), np.full(3, self.init_att_std),
            np.full(3, self.init_bias_f_std), np.full(3, self.init_bias_w_std)])
        return np.diag(stds ** 2)


# ------------------ Functions to create and parse data for the dataset files ------------------

def create_intrinsics_from_json(item: dict) -> CameraIntrinsics:
    """Creates CameraIntrinsics from the 'intrinsics' block of calib.json.

    Raises:
    - DataNotAsExpected: If keys are missing or values are inconsistent.
    """
    complainIfKeysAreNotInDict(item, ["fx", "fy", "cx", "cy", "width", "height"])
    return CameraIntrinsics(
        fx=float(item["fx"]),
        fy=float(item["fy"]),
        cx=float(item["cx"]),
        cy=float(item["cy"]),
        width=int(item["width"]),
        height=int(item["height"]),
        # a depth network trained at the input focal length needs no rescale
        f_canonical=float(item.get("f_canonical", item["fx"])),
    )


def intrinsics_to_json(intrinsics: CameraIntrinsics) -> dict:
    return {
        "fx": intrinsics.fx, "fy": intrinsics.fy, "cx": intrinsics.cx, "cy": intrinsics.cy,
        "width": intrinsics.width, "height": intrinsics.height, "f_canonical": intrinsics.f_canonical,
    }


def create_extrinsics_from_json(item: dict) -> ExtrinsicCalibration:
    """Creates ExtrinsicCalibration from the 'extrinsics' block of calib.json."""
    complainIfKeysAreNotInDict(item, ["rotation", "translation"])
    complainIfNotAList(item["rotation"], 3)
    for row in item["rotation"]:
        complainIfNotAList(row, 3)
    complainIfNotAList(item["translation"], 3)
    return ExtrinsicCalibration(np.array(item["rotation"], dtype=float),
                                np.array(item["translation"], dtype=float))


def extrinsics_to_json(calib: ExtrinsicCalibration) -> dict:
    return {"rotation": calib.rotation.tolist(), "translation": calib.translation.tolist()}


def create_nav_state_from_json(item: dict) -> NavState:
    """Creates the initial NavState from init.json (angles in degrees, Z-Y-X)."""
    complainIfKeysAreNotInDict(item, ["time", "position", "velocity", "roll", "pitch", "yaw"])
    complainIfNotAList(item["position"], 3)
    complainIfNotAList(item["velocity"], 3)
    rotation = euler_to_rotation(EulerZYX(yaw=math.radians(item["yaw"]),
                                          pitch=math.radians(item["pitch"]),
                                          roll=math.radians(item["roll"])))
    return NavState(attitude=quat_from_matrix(rotation),
                    velocity=np.array(item["velocity"], dtype=float),
                    position=np.array(item["position"], dtype=float),
                    bias_accel=np.array(item.get("bias_accel", [0.0, 0.0, 0.0]), dtype=float),
                    bias_gyro=np.array(item.get("bias_gyro", [0.0, 0.0, 0.0]), dtype=float),
                    time=float(item["time"]))


def nav_state_to_json(state: NavState) -> dict:
    euler = rotation_to_euler(quat_to_matrix(state.attitude))
    return {
        "time": state.time,
        "position": state.position.tolist(),
        "velocity": state.velocity.tolist(),
        "roll": math.degrees(euler.roll),
        "pitch": math.degrees(euler.pitch),
        "yaw": math.degrees(euler.yaw),
    }


# ------------------ Frames and pose series ------------------

@dataclass(frozen=True, eq=False)
class FrameRecord:
    """A depth frame that is loaded (or rendered) on demand."""
    epoch: int
    timestamp: float
    loader: Callable[[], DepthFrame] = field(repr=False)

    def load(self) -> DepthFrame:
        return self.loader()


@dataclass(eq=False)
class PoseSeries:
    """Time series of poses: positions in meters, angles (roll, pitch, yaw) in degrees."""
    times: np.ndarray
    positions: np.ndarray
    angles: np.ndarray
    std_devs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        n = len(self.times)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(n, 3)
        if self.std_devs is not None:
            self.std_devs = np.asarray(self.std_devs, dtype=np.float64).reshape(n, STATE_SIZE)
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise DataNotAsExpected("Pose series times must be strictly increasing.")

    def __len__(self) -> int:
        return len(self.times)

    @staticmethod
    def from_poses(times: Sequence[float], poses: Sequence[Pose],
                   std_devs: Optional[np.ndarray] = None) -> "PoseSeries":
        angles = []
        for pose in poses:
            euler = rotation_to_euler(pose.rotation)
            angles.append([math.degrees(euler.roll), math.degrees(euler.pitch), math.degrees(euler.yaw)])
        return PoseSeries(np.asarray(times), np.array([p.translation for p in poses]).reshape(-1, 3),
                          np.array(angles).reshape(-1, 3), std_devs)

    def pose(self, i: int) -> Pose:
        roll, pitch, yaw = np.radians(self.angles[i])
        return Pose(euler_to_rotation(EulerZYX(yaw=yaw, pitch=pitch, roll=roll)), self.positions[i])

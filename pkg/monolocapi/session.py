"""Navigation sessions: configuration, the per-frame map registration hook and the run loop.

A run replays a dataset epoch by epoch. Every epoch predicts with the IMU, updates with the
odometer and, when a frame is available, generates a cloud, registers it against the map and
feeds the corrected pose back into the filter. Registration failures are logged and the epoch
coasts on INS and odometer.
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .cloudgen import generate
from .dataset import Dataset, read_dataset
from .datastructures import (
    INDOOR,
    OUTDOOR,
    STATE_SIZE,
    CloudgenConfig,
    ErrorState,
    ExtrinsicCalibration,
    FilterConfig,
    FrameRecord,
    GicpConfig,
    NavState,
    NoiseConfig,
    PoseSeries,
    RegistrationConfig,
    RegistrationResult,
    SplitConfig
)
from .fusion import EpochReport, FusionSession, group_epoch, merge_empty_epochs
from .geom import EulerZYX, Pose, euler_to_rotation, quat_from_matrix
from .mapstore import IndoorMap, TileIndex, load_index, load_indoor_map
from .metrics import Metrics, compute_metrics, metrics_to_json, write_trajectory
from .registration import (
    AggregationBuffer,
    aggregate_push,
    apply_correction,
    prepare_indoor_map,
    register_indoor,
    register_outdoor,
    to_local_frame
)
from .utils import (
    ActionUnsuccessful,
    ConfigError,
    DataNotAsExpected,
    NoOverlap,
    get_ini_float,
    get_ini_int,
    get_ini_vector,
    load_ini,
    save_json
)

logger = logging.getLogger(__name__)

MODES = (INDOOR, OUTDOOR)
TRAJECTORY_FILE = "trajectory.csv"
METRICS_FILE = "metrics.json"
EVENTS_FILE = "events.log"
EVENT_FORMAT = "%(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_EPOCH_FAILED = 2


# ------------------ Configuration ------------------

@dataclass
class SessionConfig:
    cloudgen: CloudgenConfig = field(default_factory=CloudgenConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)


def _read_section(config, section: str, cls, defaults, skip=()) -> dict:
    """Reads every numeric field of a config dataclass present in the section."""
    values = {}
    instance = cls()
    for f in fields(cls):
        if f.name in skip:
            continue
        default = defaults[f.name] if f.name in defaults else getattr(instance, f.name)
        if isinstance(default, bool):
            continue
        if isinstance(default, int):
            values[f.name] = get_ini_int(config, section, f.name, default)
        elif isinstance(default, float) or default is None:
            values[f.name] = get_ini_float(config, section, f.name, default)
    return values


def _build(section: str, cls, **kwargs):
    try:
        return cls(**kwargs)
    except DataNotAsExpected as e:
        raise ConfigError(f"[{section}] {e}") from None


def _get_bool(config, section: str, key: str, default: bool) -> bool:
    if not config.has_option(section, key):
        return default
    try:
        return config.getboolean(section, key)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be true or false, got '{config.get(section, key)}'.") from None


def load_session_config(filename: Optional[str], mode: str = INDOOR) -> SessionConfig:
    """Loads a session configuration from an .ini file.

    Missing sections and keys keep their defaults; d_max and h_max default per mode.

    Parameters:
    - filename: The .ini file, or None for the defaults.
    - mode: 'indoor' or 'outdoor'.

    Raises:
    - ConfigError: If the file is missing or a value is malformed.
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown mode '{mode}'. Use one of {', '.join(MODES)}.")
    if filename is None:
        return SessionConfig(cloudgen=CloudgenConfig.for_mode(mode))
    if not Path(filename).is_file():
        raise ConfigError(f"Configuration file {filename} not found.")
    config = load_ini(filename)

    cloudgen_values = _read_section(config, "cloudgen", CloudgenConfig, {"d_max": None, "h_max": None})
    cloudgen_values["apply_masks"] = _get_bool(config, "cloudgen", "apply_masks", True)
    cloudgen_values["refine"] = _get_bool(config, "cloudgen", "refine", True)
    try:
        cloudgen = CloudgenConfig.for_mode(mode, **cloudgen_values)
    except DataNotAsExpected as e:
        raise ConfigError(f"[cloudgen] {e}") from None

    gicp = _build("gicp", GicpConfig, **_read_section(config, "gicp", GicpConfig, {}))
    split = _build("split", SplitConfig, **_read_section(config, "split", SplitConfig, {}))
    registration_values = _read_section(config, "registration", RegistrationConfig, {}, skip=("gicp", "split"))
    registration_values["aggregate"] = _get_bool(config, "registration", "aggregate", True)
    registration_values["require_convergence"] = _get_bool(config, "registration", "require_convergence", False)
    registration = _build("registration", RegistrationConfig, gicp=gicp, split=split, **registration_values)

    default_noise = NoiseConfig()
    speed_std = get_ini_vector(config, "noise", "speed_std", np.sqrt(np.diag(default_noise.N_static_speed)), 3)
    default_pose_std = np.sqrt(np.diag(default_noise.N_static_pose))
    default_pose_std[3:] = np.degrees(default_pose_std[3:])
    pose_std = get_ini_vector(config, "noise", "pose_std", default_pose_std, 6).copy()
    pose_std[3:] = np.radians(pose_std[3:])
    noise = _build("noise", NoiseConfig,
                   sigma_f=get_ini_float(config, "noise", "sigma_f", default_noise.sigma_f),
                   sigma_w=get_ini_float(config, "noise", "sigma_w", default_noise.sigma_w),
                   sigma_bf=get_ini_float(config, "noise", "sigma_bf", default_noise.sigma_bf),
                   sigma_bw=get_ini_float(config, "noise", "sigma_bw", default_noise.sigma_bw),
                   N_static_speed=np.diag(speed_std ** 2),
                   N_static_pose=np.diag(pose_std ** 2),
                   alpha=get_ini_float(config, "noise", "alpha", default_noise.alpha),
                   tune=_get_bool(config, "noise", "tune", default_noise.tune))

    default_filter = FilterConfig()
    filter_cfg = FilterConfig(
        epoch_rate=get_ini_float(config, "filter", "epoch_rate", default_filter.epoch_rate),
        max_dt=get_ini_float(config, "filter", "max_dt", default_filter.max_dt),
        init_pos_std=get_ini_float(config, "filter", "init_pos_std", default_filter.init_pos_std),
        init_vel_std=get_ini_float(config, "filter", "init_vel_std", default_filter.init_vel_std),
        init_att_std=math.radians(get_ini_float(config, "filter", "init_att_std",
                                                math.degrees(default_filter.init_att_std))),
        init_bias_f_std=get_ini_float(config, "filter", "init_bias_f_std", default_filter.init_bias_f_std),
        init_bias_w_std=get_ini_float(config, "filter", "init_bias_w_std", default_filter.init_bias_w_std))
    if filter_cfg.epoch_rate <= 0 or filter_cfg.max_dt <= 0:
        raise ConfigError("[filter] epoch_rate and max_dt must be positive.")

    logger.info("Loaded configuration %s for %s mode.", filename, mode)
    return SessionConfig(cloudgen, registration, noise, filter_cfg)


def session_config_to_sections(cfg: SessionConfig) -> dict:
    """The configuration as .ini sections; attitude standard deviations in degrees."""
    reg = cfg.registration
    pose_std = np.sqrt(np.diag(cfg.noise.N_static_pose))
    pose_std[3:] = np.degrees(pose_std[3:])
    return {
        "cloudgen": {f.name: getattr(cfg.cloudgen, f.name) for f in fields(CloudgenConfig)},
        "gicp": {f.name: getattr(reg.gicp, f.name) for f in fields(GicpConfig)},
        "split": {f.name: getattr(reg.split, f.name) for f in fields(SplitConfig)},
        "registration": {f.name: getattr(reg, f.name) for f in fields(RegistrationConfig)
                         if f.name not in ("gicp", "split")},
        "noise": {
            "sigma_f": cfg.noise.sigma_f,
            "sigma_w": cfg.noise.sigma_w,
            "sigma_bf": cfg.noise.sigma_bf,
            "sigma_bw": cfg.noise.sigma_bw,
            "speed_std": np.sqrt(np.diag(cfg.noise.N_static_speed)).tolist(),
            "pose_std": pose_std.tolist(),
            "alpha": cfg.noise.alpha,
            "tune": cfg.noise.tune,
        },
        "filter": {
            "epoch_rate": cfg.filter.epoch_rate,
            "max_dt": cfg.filter.max_dt,
            "init_pos_std": cfg.filter.init_pos_std,
            "init_vel_std": cfg.filter.init_vel_std,
            "init_att_std": math.degrees(cfg.filter.init_att_std),
            "init_bias_f_std": cfg.filter.init_bias_f_std,
            "init_bias_w_std": cfg.filter.init_bias_w_std,
        },
    }


def vanilla_config(cfg: SessionConfig) -> SessionConfig:
    """Registration without masking, refinement, aggregation and noise tuning."""
    return SessionConfig(cloudgen=replace(cfg.cloudgen, apply_masks=False, refine=False),
                         registration=replace(cfg.registration, aggregate=False),
                         noise=replace(cfg.noise, tune=False),
                         filter=cfg.filter)


# ------------------ Map registration hook ------------------

@dataclass(eq=False)
class MapRegistrar:
    """Turns a frame and the current posterior into a corrected pose.

    Called by the fusion session once per frame epoch. Returns None when the frame gives
    no usable correction.
    """
    mode: str
    calib: ExtrinsicCalibration
    cfg: SessionConfig
    indoor: Optional[IndoorMap] = None
    index: Optional[TileIndex] = None
    buffer: Optional[AggregationBuffer] = None
    point_counts: List[Dict[str, int]] = field(default_factory=list)
    results: List[RegistrationResult] = field(default_factory=list)
    rejected: int = 0
    failures: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode == INDOOR and self.indoor is None:
            raise DataNotAsExpected("Indoor registration needs an indoor map.")
        if self.mode == OUTDOOR:
            if self.index is None:
                raise DataNotAsExpected("Outdoor registration needs a tile index.")
            reg = self.cfg.registration
            if self.buffer is None and reg.aggregate:
                self.buffer = AggregationBuffer(reg.d_min, reg.d_max_total, reg.stage_voxel)

    def __call__(self, state: NavState, record: FrameRecord) -> Optional[Pose]:
        try:
            frame = record.load()
        except (OSError, DataNotAsExpected) as e:
            logger.error("Epoch %.3f: frame %d unreadable. %s", state.time, record.epoch, e)
            self.failures.append(state.time)
            return None

        prior = state.pose()
        reg = self.cfg.registration
        try:
            cloud = generate(frame, self.calib, self.cfg.cloudgen)
            if self.mode == INDOOR:
                result = register_indoor(to_local_frame(cloud, prior), self.indoor, reg)
            else:
                if self.buffer is not None:
                    merged = aggregate_push(self.buffer, cloud, prior, state.position)
                    if merged is None:
                        logger.debug("Epoch %.3f: aggregating, %.1f m collected.",
                                     state.time, self.buffer.distance_accumulated)
                        return None
                else:
                    merged = to_local_frame(cloud, prior)
                result = register_outdoor(merged, self.index, state.position, reg)
        except ActionUnsuccessful as e:
            logger.info("Epoch %.3f: registration rejected. %s", state.time, e)
            self.rejected += 1
            return None
        except DataNotAsExpected as e:
            logger.error("Epoch %.3f: registration failed. %s", state.time, e)
            self.failures.append(state.time)
            return None

        self.point_counts.append(dict(result.counts))
        self.results.append(result)
        logger.info("Epoch %.3f: registration fitness %.3f, inlier RMSE %.3f m, correction %.3f m.",
                    state.time, result.fitness, result.rmse_inliers, float(np.linalg.norm(result.delta.translation)))
        return apply_correction(prior, result.delta)

    def mean_point_counts(self) -> Dict[str, float]:
        keys = sorted({key for counts in self.point_counts for key in counts})
        return {key: float(np.mean([c[key] for c in self.point_counts if key in c])) for key in keys}


def load_map(map_path: str, mode: str, cfg: SessionConfig, calib: ExtrinsicCalibration) -> MapRegistrar:
    """Loads the map of a mode and prepares the registration targets."""
    if mode == INDOOR:
        if Path(map_path).is_dir():
            raise DataNotAsExpected(f"Indoor mode needs a point file, {map_path} is a directory.")
        indoor = prepare_indoor_map(load_indoor_map(map_path, cfg.registration.split), cfg.registration)
        return MapRegistrar(INDOOR, calib, cfg, indoor=indoor)
    return MapRegistrar(OUTDOOR, calib, cfg, index=load_index(map_path))


# ------------------ Run loop ------------------

def initial_state_of(dataset: Dataset) -> NavState:
    """init.json when present, else the first two ground-truth rows (velocity from their difference)."""
    if dataset.initial_state is not None:
        return dataset.initial_state
    truth = dataset.ground_truth
    if truth is None or len(truth) < 2:
        raise DataNotAsExpected("The dataset has neither init.json nor two ground-truth rows.")
    roll, pitch, yaw = np.radians(truth.angles[0])
    rotation = euler_to_rotation(EulerZYX(yaw=yaw, pitch=pitch, roll=roll))
    velocity = (truth.positions[1] - truth.positions[0]) / (truth.times[1] - truth.times[0])
    return NavState(quat_from_matrix(rotation), velocity, truth.positions[0], time=float(truth.times[0]))


def epoch_times(start: float, end: float, rate: float) -> np.ndarray:
    count = int(math.floor((end - start) * rate + 1e-9)) + 1
    return start + np.arange(max(count, 0)) / rate


@dataclass(eq=False)
class SessionOutcome:
    trajectory: PoseSeries
    reports: List[EpochReport]
    metrics: Optional[Metrics] = None
    point_counts: Dict[str, float] = field(default_factory=dict)
    failed_epochs: int = 0
    aborted: bool = False

    @property
    def exit_code(self) -> int:
        return EXIT_EPOCH_FAILED if self.failed_epochs or self.aborted else EXIT_OK

    def summary(self) -> dict:
        def count(attr, value):
            return sum(1 for r in self.reports if getattr(r, attr) == value)
        return {
            "epochs": len(self.reports),
            "speed_updates": count("speed_update", "accepted"),
            "speed_gated": count("speed_update", "gated"),
            "pose_updates": count("pose_update", "accepted"),
            "pose_gated": count("pose_update", "gated"),
            "no_registration": count("pose_update", "no-registration"),
            "failed_epochs": self.failed_epochs,
            "aborted": self.aborted,
        }


def navigate(dataset: Dataset, cfg: SessionConfig, registrar: Optional[MapRegistrar] = None,
             use_odometer: bool = True) -> SessionOutcome:
    """Runs the filter over a dataset and collects one posterior pose per epoch."""
    state = initial_state_of(dataset)
    err = ErrorState(np.zeros(STATE_SIZE), cfg.filter.initial_covariance())
    session = FusionSession(state, err, cfg.noise, cfg.filter, registrar, use_odometer)

    imu = [s for s in dataset.imu if s.time >= state.time - 1e-9]
    if not imu:
        raise DataNotAsExpected("No IMU samples at or after the initial state.")
    times = epoch_times(state.time, imu[-1].time, cfg.filter.epoch_rate)
    epochs = merge_empty_epochs(group_epoch(imu, dataset.odo, dataset.frames, times, 0.5 / cfg.filter.epoch_rate))

    stamps, poses, stds = [], [], []
    aborted = False
    for inputs in epochs:
        try:
            posterior = session.step(inputs)
        except DataNotAsExpected as e:
            logger.error("Epoch %.3f: cannot continue. %s", inputs.time, e)
            aborted = True
            break
        stamps.append(posterior.time)
        poses.append(posterior.pose())
        stds.append(session.err.std_devs())

    trajectory = PoseSeries.from_poses(stamps, poses, np.array(stds).reshape(-1, STATE_SIZE))
    outcome = SessionOutcome(trajectory, session.reports, aborted=aborted)
    if registrar is not None:
        outcome.failed_epochs = len(registrar.failures)
        outcome.point_counts = registrar.mean_point_counts()
    if dataset.ground_truth is not None and len(trajectory):
        try:
            outcome.metrics = compute_metrics(trajectory, dataset.ground_truth)
        except NoOverlap as e:
            logger.warning("No metrics: %s", e)
    return outcome


def run_session(dataset_dir: str, map_path: Optional[str], config_file: Optional[str], mode: str, out_dir: str,
                disable_vmr: bool = False, disable_odo: bool = False, vanilla: bool = False) -> SessionOutcome:
    """Runs a navigation session and writes trajectory.csv, metrics.json and events.log to out_dir.

    Raises:
    - ConfigError: If the configuration is malformed.
    - OSError: If the dataset or map cannot be read.
    - DataNotAsExpected: If the dataset or map is malformed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    package_logger = logging.getLogger(__package__)
    handler = logging.FileHandler(out / EVENTS_FILE, mode='w')
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter(EVENT_FORMAT))
    previous_level = package_logger.level
    if package_logger.getEffectiveLevel() > logging.INFO:
        package_logger.setLevel(logging.INFO)
    package_logger.addHandler(handler)
    try:
        cfg = load_session_config(config_file, mode)
        if vanilla:
            cfg = vanilla_config(cfg)
        dataset = read_dataset(dataset_dir)
        registrar = None
        if not disable_vmr:
            if map_path is None:
                raise DataNotAsExpected("A map is required unless registration is disabled.")
            registrar = load_map(map_path, mode, cfg, dataset.extrinsics)
        outcome = navigate(dataset, cfg, registrar, use_odometer=not disable_odo)

        write_trajectory(str(out / TRAJECTORY_FILE), outcome.trajectory)
        report = {
            "mode": mode,
            "disable_vmr": disable_vmr,
            "disable_odo": disable_odo,
            "vanilla": vanilla,
            "metrics": metrics_to_json(outcome.metrics) if outcome.metrics is not None else None,
            "point_counts": outcome.point_counts,
            "events": outcome.summary(),
        }
        save_json(report, str(out / METRICS_FILE))
        logger.info("Session finished: %d epochs, exit code %d.", len(outcome.reports), outcome.exit_code)
        return outcome
    finally:
        package_logger.removeHandler(handler)
        handler.close()
        package_logger.setLevel(previous_level)

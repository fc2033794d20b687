"""Error-state Kalman filter fusing INS mechanization, odometer speed and map registration poses.

State errors are (δp, δv, δθ, δb_f, δb_ω). The attitude error is a left-multiplicative
rotation vector in the navigation frame. Errors are injected into the nominal state and
reset to zero after every accepted update.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.stats import chi2

from .datastructures import (
    ATT,
    BIAS_F,
    BIAS_W,
    GRAVITY,
    POS,
    STATE_SIZE,
    VEL,
    ErrorState,
    FilterConfig,
    FrameRecord,
    ImuSample,
    NavState,
    NoiseConfig,
    OdoSample
)
from .geom import (
    Pose,
    normalize,
    quat_from_rotvec,
    quat_increment,
    quat_multiply,
    quat_to_matrix,
    rotation_log,
    skew
)
from .utils import AttitudeInnovationTooLarge, DataNotAsExpected, DtOutOfRange, InnovationGateExceeded

logger = logging.getLogger(__name__)

GATE_PROBABILITY = 0.999
MAX_ATTITUDE_INNOVATION = math.radians(30.0)
DT_TOLERANCE = 1e-9


# ------------------ Mechanization and prediction ------------------

def mechanize(state: NavState, imu: ImuSample, dt: float, max_dt: float = 0.1) -> NavState:
    """One strapdown integration step.

    Attitude uses the exact increment of (ω − b_ω)·dt, velocity the rotation before the
    increment, position the velocity after it.

    Raises:
    - DtOutOfRange: If dt is not in (0, max_dt].
    """
    if not 0.0 < dt <= max_dt + DT_TOLERANCE:
        raise DtOutOfRange(f"Integration step {dt:.6f} s outside (0, {max_dt}] s.")
    rotation = quat_to_matrix(state.attitude)
    attitude = normalize(quat_multiply(state.attitude, quat_increment(imu.omega - state.bias_gyro, dt)))
    velocity = state.velocity + (rotation @ (imu.f - state.bias_accel) + GRAVITY) * dt
    position = state.position + velocity * dt
    return NavState(attitude, velocity, position, state.bias_accel, state.bias_gyro, state.time + dt)


def transition_matrix(state: NavState, imu: ImuSample, dt: float) -> np.ndarray:
    """15x15 error-state transition F for one IMU step."""
    rotation = quat_to_matrix(state.attitude)
    F = np.eye(STATE_SIZE)
    F[POS, VEL] = np.eye(3) * dt
    F[VEL, ATT] = -rotation @ skew(imu.f - state.bias_accel) * dt
    F[VEL, BIAS_F] = -rotation * dt
    F[ATT, ATT] = expm(-skew(imu.omega - state.bias_gyro) * dt).T
    F[ATT, BIAS_W] = -np.eye(3) * dt
    return F


def process_noise(noise: NoiseConfig, dt: float) -> np.ndarray:
    """Discrete Q; the position rows get no direct process noise."""
    Q = np.zeros((STATE_SIZE, STATE_SIZE))
    Q[VEL, VEL] = np.eye(3) * noise.sigma_f ** 2 * dt ** 2
    Q[ATT, ATT] = np.eye(3) * noise.sigma_w ** 2 * dt ** 2
    Q[BIAS_F, BIAS_F] = np.eye(3) * noise.sigma_bf ** 2 * dt
    Q[BIAS_W, BIAS_W] = np.eye(3) * noise.sigma_bw ** 2 * dt
    return Q


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def propagate(err: ErrorState, state: NavState, imu: ImuSample, noise: NoiseConfig, dt: float) -> ErrorState:
    """Covariance prediction P <- F P F^T + Q around the pre-step nominal state."""
    if not dt > 0.0:
        raise DtOutOfRange(f"Propagation step must be positive, got {dt}")
    F = transition_matrix(state, imu, dt)
    return ErrorState(F @ err.dx, symmetrize(F @ err.P @ F.T + process_noise(noise, dt)))


# ------------------ Measurements ------------------

def heading_pitch(state: NavState) -> Tuple[float, float]:
    """Azimuth ψ (clockwise from North) and pitch θ of the body forward axis."""
    forward = quat_to_matrix(state.attitude)[:, 0]
    return math.atan2(forward[0], forward[1]), math.asin(max(-1.0, min(1.0, forward[2])))


def project_odo_velocity(odo: OdoSample, heading: float, pitch: float) -> np.ndarray:
    """Odometer speed as an ENU velocity along the vehicle heading."""
    v = odo.speed
    return np.array([
        math.sin(heading) * math.cos(pitch) * v,
        math.cos(heading) * math.cos(pitch) * v,
        math.sin(pitch) * v,
    ])


def kalman_update(err: ErrorState, H: np.ndarray, z: np.ndarray, N: np.ndarray,
                  gate_N: Optional[np.ndarray] = None) -> ErrorState:
    """Gated Kalman update with the Joseph-form covariance.

    Parameters:
    - err: Prior error state.
    - H: Measurement matrix (m x 15).
    - z: Innovation.
    - N: Measurement noise used for the gain.
    - gate_N: Measurement noise used for the chi-square gate. Defaults to N.

    Raises:
    - InnovationGateExceeded: If z^T S^-1 z exceeds the 0.999 chi-square quantile.
    """
    P = err.P
    m = len(z)
    gate_S = H @ P @ H.T + (N if gate_N is None else gate_N)
    distance = float(z @ np.linalg.solve(gate_S, z))
    limit = float(chi2.ppf(GATE_PROBABILITY, m))
    if distance > limit:
        raise InnovationGateExceeded(distance, limit)

    S = H @ P @ H.T + N
    K = np.linalg.solve(S, H @ P).T
    dx = err.dx + K @ (z - H @ err.dx)
    IKH = np.eye(STATE_SIZE) - K @ H
    return ErrorState(dx, symmetrize(IKH @ P @ IKH.T + K @ N @ K.T))


def reset_errors(err: ErrorState, state: NavState) -> Tuple[ErrorState, NavState]:
    """Injects the error mean into the nominal state and zeroes it. P is kept."""
    attitude = normalize(quat_multiply(quat_from_rotvec(err.dtheta), state.attitude))
    corrected = NavState(attitude,
                         state.velocity + err.dv,
                         state.position + err.dp,
                         state.bias_accel + err.dbf,
                         state.bias_gyro + err.dbw,
                         state.time)
    return ErrorState(np.zeros(STATE_SIZE), err.P), corrected


def speed_measurement_matrix() -> np.ndarray:
    H = np.zeros((3, STATE_SIZE))
    H[:, VEL] = np.eye(3)
    return H


def pose_measurement_matrix() -> np.ndarray:
    H = np.zeros((6, STATE_SIZE))
    H[0:3, POS] = np.eye(3)
    H[3:6, ATT] = np.eye(3)
    return H


def update_speed(err: ErrorState, state: NavState, odo: OdoSample, noise: NoiseConfig) -> Tuple[ErrorState, NavState]:
    """Velocity update from the projected odometer speed, followed by the reset."""
    heading, pitch = heading_pitch(state)
    z = project_odo_velocity(odo, heading, pitch) - state.velocity
    err = kalman_update(err, speed_measurement_matrix(), z, noise.N_static_speed)
    return reset_errors(err, state)


def pose_innovation(state: NavState, corrected: Pose) -> np.ndarray:
    """(t̂ − p, log(R̂ R^T)) stacked into a 6-vector."""
    attitude_error = rotation_log(corrected.rotation @ quat_to_matrix(state.attitude).T)
    return np.concatenate([corrected.translation - state.position, attitude_error])


def dynamic_tune(N_static: np.ndarray, innovation: np.ndarray, alpha: float) -> np.ndarray:
    """N_static · diag(exp(α |Δ_i|)).

    innovation is laid out like pose_innovation: position error (x, y, z) and then the attitude
    error as a rotation vector about the local-level axes (E, N, U). Near level attitude the U
    component is the heading error Δψ; the E and N components mix pitch and roll with heading.
    """
    if alpha < 0:
        raise DataNotAsExpected(f"alpha must be non-negative, got {alpha}")
    factors = np.exp(alpha * np.abs(np.asarray(innovation, dtype=np.float64)))
    return np.asarray(N_static) @ np.diag(factors)


def update_pose(err: ErrorState, state: NavState, corrected: Pose, noise: NoiseConfig,
                tuned_N: Optional[np.ndarray] = None) -> Tuple[ErrorState, NavState]:
    """Position and attitude update from a corrected pose, followed by the reset.

    The gate uses the static pose noise; the gain uses tuned_N when given.

    Raises:
    - AttitudeInnovationTooLarge: If the attitude innovation exceeds 30 degrees.
    - InnovationGateExceeded: See kalman_update.
    """
    z = pose_innovation(state, corrected)
    angle = float(np.linalg.norm(z[3:]))
    if angle > MAX_ATTITUDE_INNOVATION:
        raise AttitudeInnovationTooLarge(angle)
    N = noise.N_static_pose if tuned_N is None else tuned_N
    err = kalman_update(err, pose_measurement_matrix(), z, N, gate_N=noise.N_static_pose)
    return reset_errors(err, state)


# ------------------ Epoch orchestration ------------------

VmrHook = Callable[[NavState, FrameRecord], Optional[Pose]]


@dataclass
class EpochInputs:
    """Everything that arrived for one epoch.

    imu holds the samples stamped in (previous epoch, this epoch]; odo the latest
    odometer sample of that interval; frame the camera frame matched to the epoch.
    """
    time: float
    imu: Sequence[ImuSample] = ()
    odo: Optional[OdoSample] = None
    frame: Optional[FrameRecord] = None

    @staticmethod
    def from_events(time: float, imu: Sequence[ImuSample], events: Iterable) -> "EpochInputs":
        """Builds the inputs from measurements in arbitrary arrival order."""
        odo, frame = None, None
        for event in events:
            if isinstance(event, OdoSample):
                if odo is None or event.time >= odo.time:
                    odo = event
            elif isinstance(event, FrameRecord):
                if frame is None or abs(event.timestamp - time) < abs(frame.timestamp - time):
                    frame = event
            else:
                raise DataNotAsExpected(f"Unknown epoch event {type(event).__name__}.")
        return EpochInputs(time, tuple(sorted(imu, key=lambda s: s.time)), odo, frame)


@dataclass
class EpochReport:
    """What happened in one epoch, for the event log."""
    time: float
    speed_update: str = "none"
    pose_update: str = "none"
    innovation: Optional[np.ndarray] = None


def group_epoch(imu: Sequence[ImuSample], odo: Sequence[OdoSample], frames: Sequence[FrameRecord],
                epoch_times: Sequence[float], frame_window: float) -> List[EpochInputs]:
    """Distributes time-sorted sensor streams onto epochs.

    A frame belongs to the nearest epoch, the earlier one on a tie, if that epoch is within
    frame_window seconds of its timestamp. Each frame is used at most once.
    """
    result = []
    imu_times = np.array([s.time for s in imu])
    odo_times = np.array([s.time for s in odo])
    frame_epoch = _nearest_epochs([f.timestamp for f in frames], epoch_times, frame_window)
    previous = -math.inf
    for k, time in enumerate(epoch_times):
        lo, hi = previous + DT_TOLERANCE, time + DT_TOLERANCE
        imu_sel = [imu[i] for i in np.nonzero((imu_times > lo) & (imu_times <= hi))[0]]
        odo_idx = np.nonzero((odo_times > lo) & (odo_times <= hi))[0]
        frame_idx = np.nonzero(frame_epoch == k)[0]
        frame = None
        if len(frame_idx):
            frame = frames[frame_idx[np.argmin([abs(frames[i].timestamp - time) for i in frame_idx])]]
        result.append(EpochInputs(time, imu_sel, odo[odo_idx[-1]] if len(odo_idx) else None, frame))
        previous = time
    return result


def _nearest_epochs(stamps: Sequence[float], epoch_times: Sequence[float], window: float) -> np.ndarray:
    """Index of the epoch each stamp is matched to, -1 where none is within the window."""
    epochs = np.asarray(epoch_times, dtype=np.float64)
    stamps = np.asarray(stamps, dtype=np.float64)
    result = np.full(len(stamps), -1, dtype=int)
    if len(epochs) == 0 or len(stamps) == 0:
        return result
    after = np.clip(np.searchsorted(epochs, stamps, side='left'), 0, len(epochs) - 1)
    before = np.clip(after - 1, 0, len(epochs) - 1)
    take_before = np.abs(stamps - epochs[before]) <= np.abs(epochs[after] - stamps)
    nearest = np.where(take_before, before, after)
    within = np.abs(stamps - epochs[nearest]) <= window
    result[within] = nearest[within]
    return result


def merge_empty_epochs(epochs: Sequence[EpochInputs]) -> List[EpochInputs]:
    """Folds epochs without IMU samples into the next epoch that has some.

    The odometer sample and frame of a folded epoch are carried forward unless the next
    epoch has its own. Trailing epochs without IMU samples are dropped.
    """
    result = []
    odo, frame = None, None
    for inputs in epochs:
        odo = inputs.odo if inputs.odo is not None else odo
        frame = inputs.frame if inputs.frame is not None else frame
        if not inputs.imu:
            continue
        result.append(EpochInputs(inputs.time, inputs.imu, odo, frame))
        odo, frame = None, None
    if len(result) < len(epochs):
        logger.info("%d epochs without IMU samples merged into later epochs.", len(epochs) - len(result))
    return result


@dataclass
class FusionSession:
    """Single-owner filter state stepped once per epoch.

    The IMU sample that was received last is held until the next sample fixes its
    integration interval.
    """
    state: NavState
    err: ErrorState
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    vmr: Optional[VmrHook] = None
    use_odometer: bool = True
    reports: List[EpochReport] = field(default_factory=list)
    _pending: Optional[ImuSample] = field(default=None, repr=False)

    def _integrate(self, samples: Sequence[ImuSample]):
        for sample in samples:
            if self._pending is not None:
                dt = sample.time - self._pending.time
                # the covariance is predicted around the pre-step nominal state
                self.err = propagate(self.err, self.state, self._pending, self.noise, dt)
                self.state = mechanize(self.state, self._pending, dt, self.filter_cfg.max_dt)
            elif sample.time > self.state.time + DT_TOLERANCE:
                raise DataNotAsExpected(
                    f"First IMU sample at {sample.time:.3f} s is after the initial state at {self.state.time:.3f} s.")
            self._pending = sample

    def step(self, inputs: EpochInputs) -> NavState:
        """Processes one epoch: IMU prediction, odometer update, registration, pose update."""
        self._integrate(inputs.imu)
        report = EpochReport(time=self.state.time)

        if self.use_odometer and inputs.odo is not None:
            try:
                self.err, self.state = update_speed(self.err, self.state, inputs.odo, self.noise)
                report.speed_update = "accepted"
            except InnovationGateExceeded as e:
                logger.warning("Epoch %.3f: speed update skipped. %s", self.state.time, e)
                report.speed_update = "gated"

        if self.vmr is not None and inputs.frame is not None:
            corrected = self.vmr(self.state, inputs.frame)
            if corrected is None:
                report.pose_update = "no-registration"
            else:
                report.innovation = pose_innovation(self.state, corrected)
                tuned = (dynamic_tune(self.noise.N_static_pose, report.innovation, self.noise.alpha)
                         if self.noise.tune else None)
                try:
                    self.err, self.state = update_pose(self.err, self.state, corrected, self.noise, tuned)
                    report.pose_update = "accepted"
                except (InnovationGateExceeded, AttitudeInnovationTooLarge) as e:
                    logger.warning("Epoch %.3f: pose update skipped. %s", self.state.time, e)
                    report.pose_update = "gated"

        self.reports.append(report)
        return self.state

"""Trajectory error statistics and the trajectory.csv format."""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from .datastructures import STATE_SIZE, PoseSeries
from .utils import DataNotAsExpected, NoOverlap, complainIfKeysAreNotInDict

logger = logging.getLogger(__name__)

ALIGNMENT_WINDOW = 0.05
SUBMETER = 1.0
LANE_LEVEL = 1.5

STD_COLUMNS = ["sd_px", "sd_py", "sd_pz", "sd_vx", "sd_vy", "sd_vz", "sd_roll", "sd_pitch", "sd_yaw",
               "sd_bfx", "sd_bfy", "sd_bfz", "sd_bwx", "sd_bwy", "sd_bwz"]
TRAJECTORY_COLUMNS = ["time", "x", "y", "z", "roll", "pitch", "yaw"] + STD_COLUMNS

CHANNELS = ("horizontal", "vertical", "pitch", "roll", "heading")


@dataclass
class Metrics:
    """Error statistics of an estimated trajectory. Distances in m, angles in degrees."""
    horizontal_rmse: float
    vertical_rmse: float
    pitch_rmse: float
    roll_rmse: float
    heading_rmse: float
    horizontal_maxae: float
    vertical_maxae: float
    pitch_maxae: float
    roll_maxae: float
    heading_maxae: float
    pct_within_1m: float
    pct_within_1p5m: float
    epochs: int = 0


def wrap_degrees(angle):
    """Wraps angles to (-180, 180]."""
    angle = np.asarray(angle, dtype=np.float64)
    return angle - 360.0 * np.ceil((angle - 180.0) / 360.0)


def align(estimated: PoseSeries, truth: PoseSeries, window: float = ALIGNMENT_WINDOW):
    """Pairs every estimated epoch with the nearest truth epoch within window seconds.

    Returns:
    (estimate indices, truth indices) of the matched epochs.

    Raises:
    - NoOverlap: If no epoch can be matched.
    """
    if len(estimated) == 0 or len(truth) == 0:
        raise NoOverlap("Cannot align an empty trajectory.")
    dist, idx = cKDTree(truth.times[:, None]).query(estimated.times[:, None], distance_upper_bound=window)
    matched = np.isfinite(dist)
    if not matched.any():
        raise NoOverlap(f"No epochs of the two trajectories lie within {window * 1000:.0f} ms of each other.")
    return np.flatnonzero(matched), idx[matched]


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values ** 2)))


def compute_metrics(estimated: PoseSeries, truth: PoseSeries, window: float = ALIGNMENT_WINDOW) -> Metrics:
    """Computes RMSE, maximum absolute error and threshold percentages per channel.

    The thresholds are strict: an epoch with exactly 1 m horizontal error is not submeter.
    """
    est_idx, gt_idx = align(estimated, truth, window)
    delta = estimated.positions[est_idx] - truth.positions[gt_idx]
    horizontal = np.hypot(delta[:, 0], delta[:, 1])
    vertical = np.abs(delta[:, 2])
    angles = np.abs(wrap_degrees(estimated.angles[est_idx] - truth.angles[gt_idx]))
    errors = {"horizontal": horizontal, "vertical": vertical,
              "roll": angles[:, 0], "pitch": angles[:, 1], "heading": angles[:, 2]}

    values = {}
    for channel in CHANNELS:
        values[f"{channel}_rmse"] = _rms(errors[channel])
        values[f"{channel}_maxae"] = float(np.max(errors[channel]))
    values["pct_within_1m"] = 100.0 * float(np.mean(horizontal < SUBMETER))
    values["pct_within_1p5m"] = 100.0 * float(np.mean(horizontal < LANE_LEVEL))
    if len(est_idx) < len(estimated):
        logger.info("Dropped %d unmatched epochs.", len(estimated) - len(est_idx))
    return Metrics(epochs=len(est_idx), **values)


def compare_metrics(baseline: Metrics, proposed: Metrics) -> Dict[str, Optional[float]]:
    """Percentage improvement 100 (baseline - proposed) / baseline per RMSE and MaxAE channel.

    Channels with a zero baseline have no defined improvement and map to None.
    """
    result = {}
    for channel in CHANNELS:
        for stat in ("rmse", "maxae"):
            key = f"{channel}_{stat}"
            b, p = getattr(baseline, key), getattr(proposed, key)
            result[key] = None if b == 0 else 100.0 * (b - p) / b
    return result


def metrics_to_json(metrics: Metrics) -> dict:
    return asdict(metrics)


def create_metrics_from_json(item: dict) -> Metrics:
    names = [f.name for f in fields(Metrics) if f.name != "epochs"]
    complainIfKeysAreNotInDict(item, names)
    return Metrics(epochs=int(item.get("epochs", 0)), **{name: float(item[name]) for name in names})


def write_trajectory(filename: str, series: PoseSeries):
    """Writes time, position, roll/pitch/yaw in degrees and the 15 marginal standard deviations."""
    stds = series.std_devs if series.std_devs is not None else np.full((len(series), STATE_SIZE), np.nan)
    rows = np.column_stack([series.times, series.positions, series.angles, stds]).reshape(-1, len(TRAJECTORY_COLUMNS))
    np.savetxt(filename, rows, fmt='%.17g', delimiter=',', header=",".join(TRAJECTORY_COLUMNS), comments='')


def read_trajectory(filename: str) -> PoseSeries:
    """Reads a trajectory file. A ground-truth file with only the first seven columns is accepted too."""
    with open(filename) as f:
        header = f.readline().strip().split(",")
    if header[:7] != TRAJECTORY_COLUMNS[:7]:
        raise DataNotAsExpected(f"{filename} does not start with the columns {','.join(TRAJECTORY_COLUMNS[:7])}.")
    rows = np.loadtxt(filename, delimiter=',', skiprows=1, ndmin=2)
    if rows.size == 0:
        rows = np.zeros((0, len(header)))
    std_devs = rows[:, 7:7 + STATE_SIZE] if rows.shape[1] >= 7 + STATE_SIZE else None
    return PoseSeries(rows[:, 0], rows[:, 1:4], rows[:, 4:7], std_devs)


def format_metrics(metrics: Metrics) -> str:
    """Table of the metrics for the console."""
    lines = [f"{'':12}{'RMSE':>10}{'MaxAE':>10}"]
    units = {"horizontal": "m", "vertical": "m", "pitch": "deg", "roll": "deg", "heading": "deg"}
    for channel in CHANNELS:
        rmse, maxae = getattr(metrics, f"{channel}_rmse"), getattr(metrics, f"{channel}_maxae")
        lines.append(f"{channel:12}{rmse:10.3f}{maxae:10.3f}  {units[channel]}")
    lines.append(f"Submeter (< 1 m):     {metrics.pct_within_1m:6.1f} %")
    lines.append(f"Lane-level (< 1.5 m): {metrics.pct_within_1p5m:6.1f} %")
    lines.append(f"Epochs: {metrics.epochs}")
    return "\n".join(lines)

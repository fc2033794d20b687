"""Dataset directories: calibration, sensor streams, depth frames and ground truth.

Layout:

    calib.json         intrinsics (with f_canonical), extrinsics, body frame tag, rates
    imu.csv            time,fx,fy,fz,wx,wy,wz
    odo.csv            time,speed
    gt.csv             time,x,y,z,roll,pitch,yaw  (degrees)
    init.json          optional initial state
    frames/index.csv   epoch,time
    frames/<epoch>.depth|.conf|.mask
"""

import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .datastructures import (
    CameraIntrinsics,
    DepthFrame,
    ExtrinsicCalibration,
    FrameRecord,
    ImuSample,
    NavState,
    OdoSample,
    PoseSeries,
    create_extrinsics_from_json,
    create_intrinsics_from_json,
    create_nav_state_from_json,
    extrinsics_to_json,
    intrinsics_to_json,
    nav_state_to_json
)
from .utils import DataNotAsExpected, complainIfKeysAreNotInDict, load_json, read_raster, save_json, write_raster

logger = logging.getLogger(__name__)

CALIB_FILE = "calib.json"
IMU_FILE = "imu.csv"
ODO_FILE = "odo.csv"
GT_FILE = "gt.csv"
INIT_FILE = "init.json"
FRAMES_DIR = "frames"
FRAME_INDEX = "index.csv"

BODY_FRAME_TAG = "x-forward-y-left-z-up"
DEFAULT_RATES = {"imu": 100.0, "frame": 10.0, "odo": 16.0}

DEPTH_DTYPE = '<f4'
CONFIDENCE_DTYPE = '<f4'
MASK_DTYPE = 'u1'

CSV_FORMAT = '%.17g'


@dataclass(eq=False)
class Dataset:
    """A recorded or simulated drive."""
    intrinsics: CameraIntrinsics
    extrinsics: ExtrinsicCalibration
    imu: List[ImuSample]
    odo: List[OdoSample] = field(default_factory=list)
    frames: List[FrameRecord] = field(default_factory=list)
    ground_truth: Optional[PoseSeries] = None
    initial_state: Optional[NavState] = None
    rates: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))

    def time_span(self):
        if not self.imu:
            raise DataNotAsExpected("Dataset has no IMU samples.")
        return self.imu[0].time, self.imu[-1].time


def _write_csv(filename: Path, header: str, rows: np.ndarray):
    np.savetxt(filename, rows, fmt=CSV_FORMAT, delimiter=',', header=header, comments='')


def _read_csv(filename: Path, columns: int) -> np.ndarray:
    rows = np.loadtxt(filename, delimiter=',', skiprows=1, ndmin=2)
    if rows.size == 0:
        return np.zeros((0, columns))
    if rows.shape[1] != columns:
        raise DataNotAsExpected(f"{filename} has {rows.shape[1]} columns, expected {columns}.")
    return rows


def frame_paths(root: Path, epoch: int):
    stem = root / FRAMES_DIR / f"{epoch:06d}"
    return Path(f"{stem}.depth"), Path(f"{stem}.conf"), Path(f"{stem}.mask")


def write_frame(root: Path, epoch: int, frame: DepthFrame):
    depth_file, conf_file, mask_file = frame_paths(root, epoch)
    write_raster(str(depth_file), frame.depth, DEPTH_DTYPE)
    write_raster(str(conf_file), frame.confidence, CONFIDENCE_DTYPE)
    write_raster(str(mask_file), frame.mask, MASK_DTYPE)


def read_frame(root: Path, epoch: int, timestamp: float, intrinsics: CameraIntrinsics) -> DepthFrame:
    """Reads the three rasters of one frame."""
    depth_file, conf_file, mask_file = frame_paths(root, epoch)
    h, w = intrinsics.height, intrinsics.width
    return DepthFrame(read_raster(str(depth_file), h, w, DEPTH_DTYPE),
                      read_raster(str(conf_file), h, w, CONFIDENCE_DTYPE),
                      read_raster(str(mask_file), h, w, MASK_DTYPE),
                      intrinsics, timestamp)


def write_ground_truth(filename: Path, series: PoseSeries):
    _write_csv(filename, "time,x,y,z,roll,pitch,yaw",
               np.column_stack([series.times, series.positions, series.angles]))


def read_ground_truth(filename: Path) -> PoseSeries:
    rows = _read_csv(filename, 7)
    return PoseSeries(rows[:, 0], rows[:, 1:4], rows[:, 4:7])


def write_dataset(dataset: Dataset, out_dir: str):
    """Writes every part of a dataset. Frames are loaded one at a time."""
    root = Path(out_dir)
    (root / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
    save_json({
        "intrinsics": intrinsics_to_json(dataset.intrinsics),
        "extrinsics": extrinsics_to_json(dataset.extrinsics),
        "body_frame": BODY_FRAME_TAG,
        "rates": dataset.rates,
    }, str(root / CALIB_FILE))

    _write_csv(root / IMU_FILE, "time,fx,fy,fz,wx,wy,wz",
               np.array([[s.time, *s.f, *s.omega] for s in dataset.imu]).reshape(-1, 7))
    _write_csv(root / ODO_FILE, "time,speed",
               np.array([[s.time, s.speed] for s in dataset.odo]).reshape(-1, 2))
    if dataset.ground_truth is not None:
        write_ground_truth(root / GT_FILE, dataset.ground_truth)
    if dataset.initial_state is not None:
        save_json(nav_state_to_json(dataset.initial_state), str(root / INIT_FILE))

    for record in dataset.frames:
        write_frame(root, record.epoch, record.load())
    _write_csv(root / FRAMES_DIR / FRAME_INDEX, "epoch,time",
               np.array([[r.epoch, r.timestamp] for r in dataset.frames]).reshape(-1, 2))
    logger.info("Wrote dataset with %d IMU, %d odometer samples and %d frames to %s.",
                len(dataset.imu), len(dataset.odo), len(dataset.frames), root)


def read_dataset(path: str) -> Dataset:
    """Reads a dataset directory. Frames are returned as lazy records.

    Raises:
    - OSError: If calib.json or imu.csv cannot be read.
    - DataNotAsExpected: If a file is malformed.
    """
    root = Path(path)
    calib = load_json(str(root / CALIB_FILE))
    complainIfKeysAreNotInDict(calib, ["intrinsics", "extrinsics"])
    if calib.get("body_frame", BODY_FRAME_TAG) != BODY_FRAME_TAG:
        raise DataNotAsExpected(f"Unsupported body frame convention '{calib['body_frame']}'.")
    intrinsics = create_intrinsics_from_json(calib["intrinsics"])
    extrinsics = create_extrinsics_from_json(calib["extrinsics"])
    rates = dict(DEFAULT_RATES)
    rates.update(calib.get("rates", {}))

    imu_rows = _read_csv(root / IMU_FILE, 7)
    imu = [ImuSample(row[0], row[1:4].copy(), row[4:7].copy()) for row in imu_rows]
    if len(imu) > 1 and np.any(np.diff(imu_rows[:, 0]) <= 0):
        raise DataNotAsExpected("IMU timestamps must be strictly increasing.")

    odo = []
    if (root / ODO_FILE).is_file():
        odo = [OdoSample(float(t), float(v)) for t, v in _read_csv(root / ODO_FILE, 2)]

    frames = []
    index_file = root / FRAMES_DIR / FRAME_INDEX
    if index_file.is_file():
        for epoch, time in _read_csv(index_file, 2):
            loader = functools.partial(read_frame, root, int(epoch), float(time), intrinsics)
            frames.append(FrameRecord(int(epoch), float(time), loader))

    ground_truth = read_ground_truth(root / GT_FILE) if (root / GT_FILE).is_file() else None
    initial_state = None
    if (root / INIT_FILE).is_file():
        initial_state = create_nav_state_from_json(load_json(str(root / INIT_FILE)))

    logger.info("Read dataset %s: %d IMU, %d odometer samples, %d frames.", root, len(imu), len(odo), len(frames))
    return Dataset(intrinsics, extrinsics, imu, odo, frames, ground_truth, initial_state, rates)

"""Helpers shared by the monoloc modules: exceptions, file formats and configuration files."""

import configparser
import json
import math
import os
from typing import Optional, Sequence

import numpy as np


class ActionUnsuccessful(Exception):
    """Exception raised when an action is unsuccessful."""
    pass


class DataNotAsExpected(Exception):
    """Exception raised when the data is not as expected."""
    pass


class GimbalLock(DataNotAsExpected):
    """Pitch is too close to +-90 degrees for a Z-Y-X decomposition."""
    pass


class FrameMismatch(DataNotAsExpected):
    """A point cloud is tagged with a different frame than the operation expects."""
    pass


class ConfigError(DataNotAsExpected):
    """A configuration value is missing or malformed."""
    pass


class DtOutOfRange(DataNotAsExpected):
    """An IMU integration step is non-positive or too long."""
    pass


class TrajectoryOutOfBounds(DataNotAsExpected):
    """A simulated trajectory leaves the synthetic world."""
    pass


class TooFewPoints(ActionUnsuccessful):
    """A neighbourhood operation needs more points than the cloud has."""
    pass


class TooFewPointsWarning(UserWarning):
    """Issued when a filter is skipped because the cloud is too small."""
    pass


class EmptyStore(ActionUnsuccessful):
    """No map points were found while building a tile store."""
    pass


class EmptyRoi(ActionUnsuccessful):
    """The requested region of interest holds no map points."""
    pass


class NoGroundPlane(ActionUnsuccessful):
    """No near-horizontal plane supports enough points."""
    pass


class Degenerate(ActionUnsuccessful):
    """Registration has too few correspondences or an ill-conditioned system."""
    pass


class StageFailed(ActionUnsuccessful):
    """One stage of the indoor two-stage registration failed."""

    def __init__(self, stage: str, reason: str = ""):
        self.stage = stage
        super().__init__(f"Registration stage '{stage}' failed. {reason}".strip())


class GateRejected(ActionUnsuccessful):
    """A registration result did not pass the quality gate."""

    def __init__(self, fitness: float, rmse: float = 0.0, reason: str = ""):
        self.fitness = fitness
        self.rmse = rmse
        self.reason = reason
        detail = f" ({reason})" if reason else ""
        super().__init__(f"Registration rejected{detail}: fitness {fitness:.3f}, inlier rmse {rmse:.3f} m.")


class InnovationGateExceeded(ActionUnsuccessful):
    """The Mahalanobis distance of an innovation exceeds the chi-square gate."""

    def __init__(self, distance: float, limit: float):
        self.distance = distance
        self.limit = limit
        super().__init__(f"Innovation gate exceeded: {distance:.2f} > {limit:.2f}.")


class AttitudeInnovationTooLarge(ActionUnsuccessful):
    """The attitude part of a pose innovation is implausibly large."""

    def __init__(self, angle: float):
        self.angle = angle
        super().__init__(f"Attitude innovation of {math.degrees(angle):.1f} deg is too large.")


class NoOverlap(ActionUnsuccessful):
    """Two time series share no epochs."""
    pass


def append_ending(filename: str, ending: str) -> str:
    """Appends a specific ending to a filename if it doesn't already have that ending.

    Parameters:
    - filename: The original filename.
    - ending: The ending to append.

    Returns:
    The filename with the specified ending.
    """
    return filename if filename.endswith(ending) else filename + ending


def save_json(data, filename: str):
    """Saves data to a file in JSON format.

    Parameters:
    - data: Any JSON serialisable object.
    - filename: The name of the file to save the information to.
    """
    with open(filename, 'w') as output_file:
        json.dump(data, output_file, indent=4, sort_keys=True)


def load_json(filename: str):
    """Loads data from a file in JSON format.

    Parameters:
    - filename: The name of the file to load the information from.

    Returns:
    The decoded JSON document.
    """
    with open(filename, 'r') as input_file:
        return json.load(input_file)


def complainIfKeysAreNotInDict(d: dict, keys: list):
    """Checks if certain keys are present in a dictionary and raises an exception if not.

    Parameters:
    - d: The dictionary to check.
    - keys: A list of keys to check for in the dictionary.
    """
    if not isinstance(d, dict):
        raise DataNotAsExpected(f"Expected a dictionary, got {type(d)}")
    missing_keys = [key for key in keys if key not in d]
    if missing_keys:
        raise DataNotAsExpected(
            f"Missing expected keys: {', '.join(missing_keys)}")


def complainIfNotAList(d, length=None):
    """Checks if the data is a list.

    Parameters:
    - d: The item to check.
    - length: If given, the exact length the list must have.
    """
    if not isinstance(d, list):
        raise DataNotAsExpected(f"Expected a list, got {type(d)}")

    if length is not None and len(d) != length:
        raise DataNotAsExpected(f"Expected a list of length {length}, got {len(d)}")


# ------------------ Binary point and raster files ------------------

def write_points(filename: str, points: np.ndarray):
    """Writes points as little-endian float32 (x, y, z) triples without header."""
    np.asarray(points, dtype='<f4').reshape(-1, 3).tofile(filename)


def read_points(filename: str) -> np.ndarray:
    """Reads a binary point file written by write_points.

    Returns:
    An (N, 3) float64 array.
    """
    raw = np.fromfile(filename, dtype='<f4')
    if raw.size % 3 != 0:
        raise DataNotAsExpected(f"File {filename} does not hold whole (x, y, z) triples.")
    return raw.reshape(-1, 3).astype(np.float64)


def read_xyz(filename: str) -> np.ndarray:
    """Reads an ASCII file with one 'x y z' triple per line."""
    points = np.loadtxt(filename, ndmin=2)
    if points.size == 0:
        return np.zeros((0, 3))
    if points.shape[1] < 3:
        raise DataNotAsExpected(f"File {filename} needs at least three columns, got {points.shape[1]}.")
    return points[:, :3]


def write_raster(filename: str, raster: np.ndarray, dtype: str):
    """Writes a row-major raster without header."""
    np.ascontiguousarray(raster, dtype=dtype).tofile(filename)


def read_raster(filename: str, height: int, width: int, dtype: str) -> np.ndarray:
    """Reads a row-major raster of known size."""
    raw = np.fromfile(filename, dtype=dtype)
    if raw.size != height * width:
        raise DataNotAsExpected(
            f"Raster {filename} has {raw.size} values, expected {height}x{width}.")
    return raw.reshape(height, width)


# ------------------ Configuration files ------------------

def load_ini(filename: str) -> configparser.ConfigParser:
    """Loads an .ini file.

    Parameters:
    - filename: The file to read. A missing file yields an empty configuration.

    Returns:
    The parsed configuration.
    """
    config = configparser.ConfigParser()
    try:
        config.read(filename)
    except configparser.Error as e:
        raise ConfigError(f"Could not parse {filename}: {e}") from None
    return config


def save_ini(sections: dict, filename: str):
    """Saves a dictionary of sections to an .ini file.

    Parameters:
    - sections: Mapping of section name to a mapping of key to value.
    - filename: The name of the file to write.
    """
    config = configparser.ConfigParser()
    for name, values in sections.items():
        config[name] = {key: format_ini_value(value) for key, value in values.items()}
    with open(filename, 'w') as configfile:
        config.write(configfile)


def format_ini_value(value) -> str:
    """Formats a value the way get_ini_* reads it back."""
    if isinstance(value, (list, tuple, np.ndarray)):
        return ", ".join(format_ini_value(v) for v in value)
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return str(value)


def get_ini_float(config: configparser.ConfigParser, section: str, key: str,
                  default: Optional[float]) -> Optional[float]:
    """Returns a float option, 'inf' allowed, or the default when absent."""
    if not config.has_option(section, key):
        return default
    raw = config.get(section, key).strip()
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got '{raw}'.") from None


def get_ini_int(config: configparser.ConfigParser, section: str, key: str, default: int) -> int:
    """Returns an integer option or the default when absent."""
    if not config.has_option(section, key):
        return default
    raw = config.get(section, key).strip()
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be an integer, got '{raw}'.") from None


def get_ini_vector(config: configparser.ConfigParser, section: str, key: str,
                   default: Sequence[float], length: int) -> np.ndarray:
    """Returns a comma separated list of floats of the given length."""
    if not config.has_option(section, key):
        return np.asarray(default, dtype=float)
    raw = config.get(section, key)
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be comma separated numbers, got '{raw}'.") from None
    if len(values) != length:
        raise ConfigError(f"[{section}] {key} needs {length} values, got {len(values)}.")
    return np.asarray(values, dtype=float)


def config_file_from_environment(filename: Optional[str]) -> Optional[str]:
    """Returns the given config file, else the one named by MONOLOC_CONFIG, else None."""
    if filename:
        return append_ending(filename, ".ini")
    env_file = os.getenv('MONOLOC_CONFIG')
    if env_file:
        return append_ending(env_file, ".ini")
    return None

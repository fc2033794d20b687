"""Generation of refined body-frame point clouds from depth frames.

The stages run in this order (generate):
confidence_gate, canonical_rescale, apply_masks, back_project, to_body_frame,
voxel_downsample, crop, apply_scale, sor_filter (two passes).
"""

import logging
import math
import warnings

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .datastructures import (
    BODY_FRAME,
    CAMERA_FRAME,
    CloudgenConfig,
    DepthFrame,
    ExtrinsicCalibration,
    PointCloud
)
from .utils import DataNotAsExpected, FrameMismatch, TooFewPointsWarning

logger = logging.getLogger(__name__)

# slack on the SOR threshold so that clouds with equal mean distances are not cut by rounding
SOR_TOLERANCE = 1e-12


def confidence_gate(frame: DepthFrame, threshold: float) -> DepthFrame:
    """Invalidates pixels whose confidence is below the threshold.

    Parameters:
    - frame: The depth frame.
    - threshold: Minimum confidence in [0, 1]. Pixels with confidence < threshold get depth 0.

    Returns:
    A new frame with gated depth.
    """
    if not 0.0 <= threshold <= 1.0:
        raise DataNotAsExpected(f"Confidence threshold must lie in [0, 1], got {threshold}")
    depth = np.where(frame.confidence < threshold, 0.0, frame.depth)
    return frame.with_depth(depth)


def canonical_rescale(frame: DepthFrame) -> DepthFrame:
    """Maps canonical-space depth to metric depth with the ratio f_input / f_canonical."""
    ratio = frame.intrinsics.fx / frame.intrinsics.f_canonical
    return frame.with_depth(frame.depth * ratio)


def apply_masks(frame: DepthFrame, kernel: int) -> DepthFrame:
    """Dilates the transient-object mask with a kernel x kernel square and zeroes the depth under it."""
    if kernel < 1 or kernel % 2 == 0:
        raise DataNotAsExpected(f"Dilation kernel must be odd and >= 1, got {kernel}")
    mask = frame.mask.astype(bool)
    if not mask.any():
        return frame
    dilated = ndimage.binary_dilation(mask, structure=np.ones((kernel, kernel), dtype=bool))
    return frame.with_depth(np.where(dilated, 0.0, frame.depth))


def back_project(frame: DepthFrame) -> PointCloud:
    """Pinhole back-projection of every valid pixel, in row-major pixel order."""
    intr = frame.intrinsics
    v, u = np.nonzero(frame.depth > 0)
    d = frame.depth[v, u]
    points = np.column_stack([
        (u - intr.cx) * d / intr.fx,
        (v - intr.cy) * d / intr.fy,
        d,
    ])
    return PointCloud(points, CAMERA_FRAME)


def to_body_frame(cloud: PointCloud, calib: ExtrinsicCalibration) -> PointCloud:
    """Moves a camera-frame cloud into the body frame."""
    if cloud.frame != CAMERA_FRAME:
        raise FrameMismatch(f"Expected a cloud in the camera frame, got '{cloud.frame}'.")
    return PointCloud(calib.as_pose().apply(cloud.points), BODY_FRAME)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replaces the points of every occupied voxel by their centroid.

    Voxel indices are floor(coordinate / voxel) per axis. Output points are ordered by voxel index.
    """
    if not voxel > 0:
        raise DataNotAsExpected(f"Voxel size must be positive, got {voxel}")
    if len(cloud) == 0:
        return cloud.with_points(cloud.points)
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    return cloud.with_points(sums / counts[:, None])


def crop(cloud: PointCloud, d_max: float, h_max: float) -> PointCloud:
    """Keeps points with forward coordinate x < d_max and height z < h_max (body frame)."""
    if not d_max > 0:
        raise DataNotAsExpected(f"d_max must be positive, got {d_max}")
    keep = (cloud.points[:, 0] < d_max) & (cloud.points[:, 2] < h_max)
    return cloud.with_points(cloud.points[keep])


def apply_scale(cloud: PointCloud, s: float) -> PointCloud:
    """Scales all points about the body origin."""
    if not s > 0:
        raise DataNotAsExpected(f"Scale factor must be positive, got {s}")
    return cloud.with_points(cloud.points * s)


def mean_neighbor_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Mean Euclidean distance of every point to its k nearest other points."""
    tree = cKDTree(points)
    distances, _ = tree.query(points, k=k + 1)
    # column 0 is the point itself (or an exact duplicate at the same distance 0)
    return distances[:, 1:].mean(axis=1)


def sor_filter(cloud: PointCloud, k: int, tau: float) -> PointCloud:
    """Statistical outlier removal.

    Keeps points whose mean k-NN distance is at most mean + tau * std of all those distances.
    A cloud with k or fewer points is returned unchanged with a TooFewPointsWarning.
    """
    if k < 1 or tau < 0:
        raise DataNotAsExpected(f"SOR needs k >= 1 and tau >= 0, got k={k}, tau={tau}")
    if len(cloud) <= k:
        warnings.warn(f"SOR skipped: {len(cloud)} points for k={k}.", TooFewPointsWarning, stacklevel=2)
        return cloud
    if math.isinf(tau):
        return cloud
    mu_i = mean_neighbor_distances(cloud.points, k)
    mu = mu_i.mean()
    sigma = mu_i.std()
    keep = mu_i <= mu + tau * sigma + SOR_TOLERANCE * max(1.0, mu)
    return cloud.with_points(cloud.points[keep])


def generate(frame: DepthFrame, calib: ExtrinsicCalibration, cfg: CloudgenConfig) -> PointCloud:
    """Runs the whole generation pipeline on one frame.

    With cfg.apply_masks False the transient-object masks are ignored; with cfg.refine False
    cropping, scale correction and outlier removal are skipped.
    """
    frame = confidence_gate(frame, cfg.confidence_threshold)
    frame = canonical_rescale(frame)
    if cfg.apply_masks:
        frame = apply_masks(frame, cfg.dilation_kernel)
    cloud = back_project(frame)
    if len(cloud) == 0:
        return PointCloud.empty(BODY_FRAME)
    cloud = to_body_frame(cloud, calib)
    valid = len(cloud)
    cloud = voxel_downsample(cloud, cfg.voxel_size)
    if cfg.refine:
        cloud = crop(cloud, cfg.d_max, cfg.h_max)
        cloud = apply_scale(cloud, cfg.scale)
        cloud = _sor_pass(cloud, cfg.sor1_k, cfg.sor1_tau)
        cloud = _sor_pass(cloud, cfg.sor2_k, cfg.sor2_tau)
    logger.debug("Frame %.3f: %d valid pixels, %d points after generation.", frame.timestamp, valid, len(cloud))
    return cloud


def _sor_pass(cloud: PointCloud, k: int, tau: float) -> PointCloud:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TooFewPointsWarning)
        filtered = sor_filter(cloud, k, tau)
    if caught:
        logger.debug("SOR pass (k=%d) skipped on %d points.", k, len(cloud))
    return filtered

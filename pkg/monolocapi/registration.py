"""Visual map registration flows.

Indoor: the query cloud is split into ground and surround. The ground is registered
in 3-D and only its vertical components (z, pitch, roll) are kept. The surround,
corrected vertically, is flattened and registered in 2-D for (x, y, yaw).

Outdoor: body clouds are aggregated over the travelled distance and the merged cloud
is registered in 6-DOF against the map ROI around the prior position.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .cloudgen import voxel_downsample
from .datastructures import (
    BODY_FRAME,
    LOCAL_FRAME,
    PointCloud,
    RegistrationConfig,
    RegistrationResult,
    SplitConfig
)
from .geom import HORIZONTAL_DOF, VERTICAL_DOF, Pose, compose_partial, decompose
from .gicp import estimate_covariances, estimate_covariances_2d, gicp
from .mapstore import IndoorMap, TileIndex, query_roi, split_points
from .utils import (
    DataNotAsExpected,
    Degenerate,
    FrameMismatch,
    GateRejected,
    GimbalLock,
    NoGroundPlane,
    StageFailed,
    TooFewPoints
)

logger = logging.getLogger(__name__)

STAGE_SPLIT = "split"
STAGE_GROUND = "ground"
STAGE_PLANAR = "planar"


def to_local_frame(cloud: PointCloud, prior: Pose) -> PointCloud:
    """Places a body-frame cloud in the local-level frame with the prior pose."""
    if cloud.frame != BODY_FRAME:
        raise FrameMismatch(f"Expected a cloud in the body frame, got '{cloud.frame}'.")
    return PointCloud(prior.apply(cloud.points), LOCAL_FRAME)


def apply_correction(prior: Pose, delta: Pose) -> Pose:
    """Corrected pose delta ∘ prior."""
    return delta.compose(prior)


def split_ground(cloud: PointCloud, cfg: Optional[SplitConfig] = None) -> Tuple[PointCloud, PointCloud]:
    """Ground / surround partition of a query cloud, same algorithm as the indoor map split."""
    ground, surround, _ = split_points(cloud.points, cfg or SplitConfig())
    return cloud.with_points(cloud.points[ground]), cloud.with_points(cloud.points[surround])


def flatten_2d(cloud: PointCloud, voxel: float = 0.2) -> PointCloud:
    """Top-down projection (z = 0) followed by voxel downsampling."""
    flat = cloud.points.copy()
    flat[:, 2] = 0.0
    return voxel_downsample(cloud.with_points(flat), voxel)


def gate_result(result: RegistrationResult, cfg: RegistrationConfig):
    """Raises GateRejected unless fitness and inlier RMSE pass the configured gates.

    With cfg.require_convergence an unconverged result is rejected as well.
    """
    if result.fitness < cfg.fitness_gate or result.rmse_inliers > cfg.rmse_gate:
        raise GateRejected(result.fitness, result.rmse_inliers)
    if cfg.require_convergence and not result.converged:
        raise GateRejected(result.fitness, result.rmse_inliers, reason="not converged")


def prepare_target(cloud: PointCloud, cfg: RegistrationConfig) -> PointCloud:
    """Downsamples a map cloud at map_voxel and attaches covariances."""
    reduced = voxel_downsample(cloud, cfg.map_voxel)
    return estimate_covariances(reduced, cfg.gicp.k_neighbors, cfg.gicp.plane_regularization)


def prepare_indoor_map(indoor: IndoorMap, cfg: RegistrationConfig) -> IndoorMap:
    """Computes the registration targets of an indoor map once."""
    indoor.ground_target = prepare_target(indoor.ground, cfg)
    flat = flatten_2d(indoor.surround, cfg.stage_voxel)
    indoor.surround_target = estimate_covariances_2d(flat, cfg.gicp.k_neighbors, cfg.gicp.plane_regularization)
    logger.info("Indoor targets: %d ground, %d flattened surround points.",
                len(indoor.ground_target), len(indoor.surround_target))
    return indoor


def _run_stage(stage: str, source: PointCloud, target: PointCloud, cfg: RegistrationConfig) -> RegistrationResult:
    try:
        result = gicp(source, target, None, cfg.gicp)
        gate_result(result, cfg)
    except (Degenerate, TooFewPoints, GateRejected) as e:
        raise StageFailed(stage, str(e)) from None
    return result


def register_indoor(cloud: PointCloud, indoor: IndoorMap, cfg: Optional[RegistrationConfig] = None) -> RegistrationResult:
    """Two-stage indoor registration.

    Returns:
    A result whose delta is ΔT_h ∘ ΔT_v and whose fitness is the smaller stage fitness; the
    stage corrections are kept in stages under 'ground' and 'planar'.

    Raises:
    - StageFailed: With stage 'split', 'ground' or 'planar'.
    """
    cfg = cfg or RegistrationConfig()
    if cloud.frame != LOCAL_FRAME:
        raise FrameMismatch(f"Expected a cloud in the local-level frame, got '{cloud.frame}'.")
    if indoor.ground_target is None or indoor.surround_target is None:
        prepare_indoor_map(indoor, cfg)

    try:
        ground, surround = split_ground(cloud, cfg.split)
    except NoGroundPlane as e:
        raise StageFailed(STAGE_SPLIT, str(e)) from None

    vertical = _run_stage(STAGE_GROUND, ground, indoor.ground_target, cfg)
    try:
        euler, translation = decompose(vertical.delta)
    except GimbalLock as e:
        raise StageFailed(STAGE_GROUND, str(e)) from None
    delta_v = compose_partial(euler, translation, VERTICAL_DOF)

    flat = flatten_2d(surround.with_points(delta_v.apply(surround.points)), cfg.stage_voxel)
    if len(flat) <= cfg.gicp.k_neighbors:
        raise StageFailed(STAGE_PLANAR, f"Only {len(flat)} flattened surround points.")
    flat = estimate_covariances_2d(flat, cfg.gicp.k_neighbors, cfg.gicp.plane_regularization)
    planar = _run_stage(STAGE_PLANAR, flat, indoor.surround_target, cfg)
    try:
        euler, translation = decompose(planar.delta)
    except GimbalLock as e:
        raise StageFailed(STAGE_PLANAR, str(e)) from None
    delta_h = compose_partial(euler, translation, HORIZONTAL_DOF)

    logger.debug("Indoor stages: ground fitness %.3f, planar fitness %.3f.", vertical.fitness, planar.fitness)
    return RegistrationResult(
        delta=delta_h.compose(delta_v),
        fitness=min(vertical.fitness, planar.fitness),
        rmse_inliers=max(vertical.rmse_inliers, planar.rmse_inliers),
        iterations=vertical.iterations + planar.iterations,
        converged=vertical.converged and planar.converged,
        counts={"source": len(cloud), "ground": len(ground), "surround": len(surround)},
        stages={STAGE_GROUND: delta_v, STAGE_PLANAR: delta_h},
    )


@dataclass
class AggregationBuffer:
    """Collects local-level clouds until the vehicle has travelled d_max_total.

    The first push only sets the anchor. A cloud is taken when the vehicle moved at least
    d_min from the anchor.
    """
    d_min: float = 1.0
    d_max_total: float = 10.0
    voxel: float = 0.2
    clouds: List[PointCloud] = field(default_factory=list)
    anchor_position: Optional[np.ndarray] = None
    distance_accumulated: float = 0.0

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max_total:
            raise DataNotAsExpected("Aggregation needs 0 < d_min < d_max_total.")

    def reset(self):
        self.clouds = []
        self.distance_accumulated = 0.0


def aggregate_push(buf: AggregationBuffer, cloud: PointCloud, pose: Pose, position) -> Optional[PointCloud]:
    """Offers one body cloud to the buffer.

    Returns:
    The voxel-downsampled union of the buffered clouds once the accumulated distance reaches
    d_max_total, else None.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    if buf.anchor_position is None:
        buf.anchor_position = position
        return None
    step = float(np.linalg.norm(position - buf.anchor_position))
    if step < buf.d_min:
        return None

    buf.clouds.append(to_local_frame(cloud, pose))
    buf.anchor_position = position
    buf.distance_accumulated += step
    if buf.distance_accumulated < buf.d_max_total:
        return None

    merged = voxel_downsample(PointCloud(np.vstack([c.points for c in buf.clouds]), LOCAL_FRAME), buf.voxel)
    logger.debug("Aggregated %d clouds over %.1f m into %d points.",
                 len(buf.clouds), buf.distance_accumulated, len(merged))
    buf.reset()
    return merged


def register_outdoor(merged: PointCloud, index: TileIndex, prior_position,
                     cfg: Optional[RegistrationConfig] = None) -> RegistrationResult:
    """Full 6-DOF registration of an aggregated cloud against the map ROI.

    Raises:
    - EmptyRoi: The ROI around prior_position holds no map points.
    - Degenerate: Too few correspondences or points.
    - GateRejected: Fitness or inlier RMSE outside the gates.
    """
    cfg = cfg or RegistrationConfig()
    if merged.frame != LOCAL_FRAME:
        raise FrameMismatch(f"Expected a cloud in the local-level frame, got '{merged.frame}'.")
    if len(merged) == 0:
        raise Degenerate("Cannot register an empty cloud.")
    roi = query_roi(index, prior_position, cfg.roi_extent)
    try:
        target = prepare_target(roi, cfg)
        result = gicp(merged, target, None, cfg.gicp)
    except TooFewPoints as e:
        raise Degenerate(str(e)) from None
    gate_result(result, cfg)
    return RegistrationResult(result.delta, result.fitness, result.rmse_inliers, result.iterations,
                              result.converged, {"source": len(merged), "target": len(target)})


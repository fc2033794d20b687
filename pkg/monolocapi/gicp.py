"""Generalized-ICP (plane-to-plane) registration.

The pose is refined by Gauss-Newton on SE(3) with a left perturbation
R <- Exp(phi) R, t <- Exp(phi) t + rho. Correspondences are the exact nearest
target neighbours within max_correspondence_dist and are re-found every iteration.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .datastructures import GicpConfig, PointCloud, RegistrationResult
from .geom import Pose, rotation_exp
from .utils import Degenerate, TooFewPoints

logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 10
MAX_CONDITION = 1e12
MAX_HALVINGS = 12
# relative objective increase still taken as no increase (rounding at the optimum)
STALL_TOLERANCE = 1e-12


def _neighbour_scatter(points: np.ndarray, k: int) -> np.ndarray:
    """(N, D, D) scatter matrices of the k nearest neighbours (the point itself included)."""
    _, idx = cKDTree(points).query(points, k=k)
    neighbours = points[idx]
    centered = neighbours - neighbours.mean(axis=1, keepdims=True)
    return np.einsum('nki,nkj->nij', centered, centered) / k


def estimate_covariances(cloud: PointCloud, k: int = 20, epsilon: float = 1e-3) -> PointCloud:
    """Attaches plane-regularized covariances V diag(epsilon, 1, 1) V^T to every point.

    V holds the eigenvectors of the local k-NN scatter, smallest eigenvalue first.

    Raises:
    - TooFewPoints: If the cloud has k or fewer points.
    """
    if len(cloud) <= k:
        raise TooFewPoints(f"Covariance estimation needs more than {k} points, got {len(cloud)}.")
    _, vectors = np.linalg.eigh(_neighbour_scatter(cloud.points, k))
    scales = np.array([epsilon, 1.0, 1.0])
    covariances = np.einsum('nij,j,nkj->nik', vectors, scales, vectors)
    return PointCloud(cloud.points, cloud.frame, covariances)


def estimate_covariances_2d(cloud: PointCloud, k: int = 20, epsilon: float = 1e-3) -> PointCloud:
    """Covariances for a z-flattened cloud.

    The vertical axis and the in-plane normal of the local line get epsilon, the line
    direction gets 1.
    """
    if len(cloud) <= k:
        raise TooFewPoints(f"Covariance estimation needs more than {k} points, got {len(cloud)}.")
    _, vectors2 = np.linalg.eigh(_neighbour_scatter(cloud.points[:, :2], k))
    n = len(cloud)
    normal = np.zeros((n, 3))
    tangent = np.zeros((n, 3))
    normal[:, :2] = vectors2[:, :, 0]
    tangent[:, :2] = vectors2[:, :, 1]
    up = np.array([0.0, 0.0, 1.0])
    covariances = (epsilon * np.einsum('i,j->ij', up, up)[None]
                   + epsilon * np.einsum('ni,nj->nij', normal, normal)
                   + np.einsum('ni,nj->nij', tangent, tangent))
    return PointCloud(cloud.points, cloud.frame, covariances)


def _batched_skew(points: np.ndarray) -> np.ndarray:
    s = np.zeros((len(points), 3, 3))
    s[:, 0, 1], s[:, 0, 2] = -points[:, 2], points[:, 1]
    s[:, 1, 0], s[:, 1, 2] = points[:, 2], -points[:, 0]
    s[:, 2, 0], s[:, 2, 1] = -points[:, 1], points[:, 0]
    return s


def objective(residuals: np.ndarray, weights: np.ndarray) -> float:
    """Sum of d_i^T M_i d_i."""
    return float(np.einsum('ni,nij,nj->', residuals, weights, residuals))


def gauss_newton_step(source: np.ndarray, source_cov: np.ndarray,
                      target: np.ndarray, target_cov: np.ndarray,
                      rotation: np.ndarray, translation: np.ndarray
                      ) -> Tuple[np.ndarray, np.ndarray, float, float, Optional[np.ndarray]]:
    """One damped Gauss-Newton step for fixed correspondences source[i] <-> target[i].

    The step is halved until the objective (with weights frozen at the current rotation)
    does not increase.

    Returns:
    (rotation, translation, objective before, objective after, applied 6-vector (rho, phi)).
    The applied vector is None and the pose unchanged when no halved step keeps the objective
    from increasing.

    Raises:
    - Degenerate: If the normal matrix is ill-conditioned.
    """
    moved = source @ rotation.T + translation
    combined = target_cov + np.einsum('ij,njk,lk->nil', rotation, source_cov, rotation)
    weights = np.linalg.inv(combined)
    residuals = target - moved

    jac = np.zeros((len(moved), 3, 6))
    jac[:, :, :3] = np.eye(3)
    jac[:, :, 3:] = -_batched_skew(moved)
    H = np.einsum('nki,nkl,nlj->ij', jac, weights, jac)
    b = np.einsum('nki,nkl,nl->i', jac, weights, residuals)
    if np.linalg.cond(H) > MAX_CONDITION:
        raise Degenerate(f"Normal matrix condition {np.linalg.cond(H):.3g} exceeds {MAX_CONDITION:.0e}.")
    delta = np.linalg.solve(H, b)

    before = objective(residuals, weights)
    step = 1.0
    for _ in range(MAX_HALVINGS):
        increment = rotation_exp(step * delta[3:])
        new_rotation = increment @ rotation
        new_translation = increment @ translation + step * delta[:3]
        after = objective(target - (source @ new_rotation.T + new_translation), weights)
        if after <= before + STALL_TOLERANCE * before:
            return new_rotation, new_translation, before, after, step * delta
        step *= 0.5
    return rotation, translation, before, before, None


def _with_covariances(cloud: PointCloud, cfg: GicpConfig) -> PointCloud:
    if cloud.covariances is not None:
        return cloud
    return estimate_covariances(cloud, cfg.k_neighbors, cfg.plane_regularization)


def correspondences(tree: cKDTree, moved: np.ndarray, max_dist: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest target index per moved source point; returns (inlier mask, target idx, distance)."""
    dist, idx = tree.query(moved, distance_upper_bound=max_dist)
    inlier = np.isfinite(dist)
    return inlier, idx[inlier], dist[inlier]


def gicp(source: PointCloud, target: PointCloud, init: Optional[Pose] = None,
         cfg: Optional[GicpConfig] = None) -> RegistrationResult:
    """Registers source onto target.

    Parameters:
    - source: Cloud to move. Covariances are estimated when absent.
    - target: Reference cloud. Covariances are estimated when absent.
    - init: Initial guess of the source-to-target transform.
    - cfg: Solver parameters.

    Returns:
    A RegistrationResult whose delta satisfies delta ∘ init = estimated transform.

    Raises:
    - Degenerate: Fewer than 10 correspondences or an ill-conditioned normal matrix.
    - TooFewPoints: If covariances cannot be estimated.
    """
    cfg = cfg or GicpConfig()
    init = init or Pose.identity()
    if len(source) == 0 or len(target) == 0:
        raise Degenerate("Cannot register an empty cloud.")
    source = _with_covariances(source, cfg)
    target = _with_covariances(target, cfg)
    tree = cKDTree(target.points)

    rotation, translation = init.rotation.copy(), init.translation.copy()
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        moved = source.points @ rotation.T + translation
        inlier, idx, _ = correspondences(tree, moved, cfg.max_correspondence_dist)
        if len(idx) < MIN_CORRESPONDENCES:
            raise Degenerate(f"Only {len(idx)} correspondences within {cfg.max_correspondence_dist} m.")
        rotation, translation, before, after, applied = gauss_newton_step(
            source.points[inlier], source.covariances[inlier],
            target.points[idx], target.covariances[idx],
            rotation, translation)
        logger.debug("GICP iteration %d: %d correspondences, objective %.6g -> %.6g.",
                     iteration, len(idx), before, after)
        if applied is None:
            logger.debug("GICP iteration %d: no step reduced the objective, stopping unconverged.", iteration)
            break
        if (np.linalg.norm(applied[:3]) < cfg.translation_epsilon
                and np.linalg.norm(applied[3:]) < cfg.rotation_epsilon):
            converged = True
            break

    moved = source.points @ rotation.T + translation
    _, idx, dist = correspondences(tree, moved, cfg.max_correspondence_dist)
    fitness = len(idx) / len(source)
    rmse = float(np.sqrt(np.mean(dist ** 2))) if len(idx) else 0.0
    total = Pose(rotation, translation)
    return RegistrationResult(delta=total.compose(init.inverse()), fitness=fitness, rmse_inliers=rmse,
                              iterations=iteration, converged=converged,
                              counts={"source": len(source), "target": len(target)})

"""Rigid pre-alignment: least-squares Procrustes and point-to-point ICP."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateConfiguration
from .geometry import PointCloud, RigidTransform

logger = logging.getLogger(__name__)


def _as_points(obj) -> np.ndarray:
    return obj.points if isinstance(obj, PointCloud) else np.asarray(obj, dtype=float).reshape(-1, 3)


def _check_spread(pts: np.ndarray, what: str) -> None:
    if len(pts) < 3:
        raise DegenerateConfiguration(f"{what}: need at least 3 points, got {len(pts)}")
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateConfiguration(f"{what}: points are collinear")


def procrustes(source_pts, target_pts) -> RigidTransform:
    """Rigid transform minimizing ``sum ||R s_i + t - d_i||^2`` (Kabsch, det-corrected)."""
    src = _as_points(source_pts)
    dst = _as_points(target_pts)
    if src.shape != dst.shape:
        raise DegenerateConfiguration("source and target must have equal length")
    _check_spread(src, "source")
    _check_spread(dst, "target")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return RigidTransform(R, cd - R @ cs)


def rigid_icp(source, target, max_iters: int = 100, tol: float = 1e-9,
              init: RigidTransform | None = None) -> RigidTransform:
    """Align ``source`` onto ``target`` by alternating nearest neighbours and Procrustes.

    Stops when the RMS closest-point distance changes by less than ``tol``;
    returns the transform with the lowest RMS seen.
    """
    src = _as_points(source)
    dst = _as_points(target)
    _check_spread(src, "source")
    _check_spread(dst, "target")
    tree = cKDTree(dst)
    T = init or RigidTransform.identity()
    best, best_rms = T, np.inf
    prev = np.inf
    for it in range(max_iters):
        moved = T.apply(src)
        dist, idx = tree.query(moved)
        rms = float(np.sqrt(np.mean(dist**2)))
        if rms < best_rms:
            best, best_rms = T, rms
        if abs(prev - rms) < tol:
            break
        prev = rms
        T = procrustes(src, dst[idx])
    logger.debug("icp stopped after %d iterations, rms %.6g", it + 1, best_rms)
    return best


def rms_distance(source, target, T: RigidTransform) -> float:
    dist, _ = cKDTree(_as_points(target)).query(T.apply(_as_points(source)))
    return float(np.sqrt(np.mean(dist**2)))

"""Geofencing and sensor self-calibration (L-Coor to H-Coor).

Calibration fits the ground plane with seeded RANSAC over the lowest-z
stratum, then builds the rigid transform that levels the ground at
z = -mount_height with the minimal normal-to-up rotation (no yaw injected).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, rotation_aligning
from .scene import PointCloudFrame

RANSAC_ITERATIONS = 200
RANSAC_INLIER_THRESHOLD = 0.1  # m
GROUND_STRATUM_FRACTION = 0.3
MIN_INLIER_RATIO = 0.3
MIN_GROUND_POINTS = 50


class CalibrationError(RuntimeError):
    """Ground-plane fit failed (too few points or inlier ratio below 0.3)."""


@dataclass
class GeofenceBounds:
    x_min: float = -51.2
    x_max: float = 51.2
    y_min: float = -51.2
    y_max: float = 51.2
    z_min: float = -5.0
    z_max: float = 0.0

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if not lo < hi:
                raise ValueError(f"{axis}_min={lo} must be < {axis}_max={hi}")

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Closed-interval membership mask for an (N, 3) array."""
        xyz = np.asarray(xyz, dtype=float)
        return (
            (xyz[:, 0] >= self.x_min) & (xyz[:, 0] <= self.x_max)
            & (xyz[:, 1] >= self.y_min) & (xyz[:, 1] <= self.y_max)
            & (xyz[:, 2] >= self.z_min) & (xyz[:, 2] <= self.z_max)
        )


def geofence(frame: PointCloudFrame, bounds: GeofenceBounds) -> PointCloudFrame:
    """Keep exactly the points inside all closed bounds, order preserved."""
    mask = bounds.contains(frame.xyz)
    return PointCloudFrame(t=frame.t, points=frame.points[mask])


def _fit_plane(pts: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares plane n.x = d through points; n unit, d signed offset."""
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1]
    return n, float(n @ centroid)


def estimate_ground_calibration(
    frame: PointCloudFrame,
    mount_height: float,
    seed: int = 0,
) -> RigidTransform:
    """RANSAC-fit the ground plane and return the leveling transform.

    The result maps the fitted plane onto z = -mount_height with the plane
    normal sent to +z. Raises CalibrationError when fewer than 30% of the
    candidate points support the best plane.
    """
    xyz = frame.xyz
    k = int(np.ceil(GROUND_STRATUM_FRACTION * len(xyz)))
    if k < MIN_GROUND_POINTS:
        raise ValueError(
            f"need at least {MIN_GROUND_POINTS} points in the lowest-z stratum, have {k}"
        )
    order = np.argsort(xyz[:, 2], kind="stable")
    cand = xyz[order[:k]]

    rng = np.random.default_rng(seed)
    best_count = -1
    best_mask = None
    for _ in range(RANSAC_ITERATIONS):
        idx = rng.choice(k, size=3, replace=False)
        p0, p1, p2 = cand[idx]
        n = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        n = n / norm
        d = n @ p0
        mask = np.abs(cand @ n - d) <= RANSAC_INLIER_THRESHOLD
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_count < MIN_INLIER_RATIO * k:
        raise CalibrationError(
            f"plane-fit inlier ratio {best_count / k:.3f} below {MIN_INLIER_RATIO}"
        )

    n, d = _fit_plane(cand[best_mask])
    # Orient the normal toward the sensor at the L-Coor origin (ground below).
    if d > 0:
        n, d = -n, -d
    r = rotation_aligning(n, np.array([0.0, 0.0, 1.0]))
    # Rotation preserves n.x = d, so the plane lands at z = d; shift to -h.
    tz = -mount_height - d
    return RigidTransform.from_rotation_translation(r, [0.0, 0.0, tz])


def apply_transform(frame: PointCloudFrame, t: RigidTransform) -> PointCloudFrame:
    """Left-multiply every point in homogeneous form; reflectivity unchanged."""
    t.validate()
    pts = frame.points.copy()
    pts[:, :3] = t.apply_points(frame.xyz)
    return PointCloudFrame(t=frame.t, points=pts)

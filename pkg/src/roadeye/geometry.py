"""Shared geometric primitives: oriented boxes, rigid transforms, angles."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Tolerance for the orthonormality / determinant checks on rigid transforms.
RIGID_TOL = 1e-9


class ObjectClass(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


def normalize_angle(theta: float) -> float:
    """Wrap an angle in radians into (-pi, pi]."""
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass
class OrientedBox3D:
    """Axis-up oriented box: center (x, y, z), extents (w, l, h), yaw theta.

    The length axis l points along the heading theta, w is lateral, h vertical.
    theta is normalized into (-pi, pi] on construction.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box dims must be positive, got w={self.w} l={self.l} h={self.h}")
        self.theta = normalize_angle(self.theta)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.w, self.l, self.h)

    @property
    def footprint_diagonal(self) -> float:
        return math.hypot(self.w, self.l)


class NonRigidTransformError(ValueError):
    """Raised when a 4x4 matrix fails the rigid-transform contract."""


@dataclass
class RigidTransform:
    """4x4 homogeneous rigid transform (orthonormal rotation, det +1)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.validate()

    def validate(self):
        m = self.matrix
        if m.shape != (4, 4):
            raise NonRigidTransformError(f"expected 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=RIGID_TOL, rtol=0.0):
            raise NonRigidTransformError("bottom row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=RIGID_TOL, rtol=0.0):
            raise NonRigidTransformError("rotation block is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > RIGID_TOL:
            raise NonRigidTransformError("rotation block determinant is not +1 within 1e-9")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=float)
        m[:3, 3] = np.asarray(translation, dtype=float)
        return cls(m)

    @classmethod
    def from_translation(cls, translation) -> "RigidTransform":
        return cls.from_rotation_translation(np.eye(3), translation)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @property
    def yaw(self) -> float:
        """Rotation about +z extracted as atan2(R10, R00)."""
        return math.atan2(self.matrix[1, 0], self.matrix[0, 0])

    def inverse(self) -> "RigidTransform":
        r = self.rotation.T
        return RigidTransform.from_rotation_translation(r, -r @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self @ other: apply `other` first, then self."""
        return RigidTransform(self.matrix @ other.matrix)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def apply_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.rotation @ p + self.translation

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation


def rotation_about_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_aligning(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector a onto unit vector b (Rodrigues)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # Antiparallel: rotate by pi about any axis orthogonal to a.
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis = axis / np.linalg.norm(axis)
        k = _skew(axis)
        return np.eye(3) + 2.0 * (k @ k)
    k = _skew(v)
    return np.eye(3) + k + k @ k * ((1.0 - c) / (s * s))


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def transform_box(box: OrientedBox3D, t: RigidTransform) -> OrientedBox3D:
    """Transform a box center and add the transform's z-yaw to its heading.

    Exact for transforms whose rotation is about +z; under tilt the heading
    update is the yaw projection only.
    """
    cx, cy, cz = t.apply_point(box.center)
    return OrientedBox3D(cx, cy, cz, box.w, box.l, box.h, box.theta + t.yaw)

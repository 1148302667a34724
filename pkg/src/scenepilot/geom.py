"""Planar geometry primitives: local frames, 6D rotation encoding, oriented boxes.

The character lives on a yaw-only manifold: its orientation is a single heading
angle about the vertical axis.  Heights (z) are kept in the world frame
everywhere; only horizontal coordinates are transformed into local frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateRotationError(ValueError):
    """Raised when a 6D rotation cannot be orthonormalized."""


def normalize_angle(a):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = a - 2.0 * np.pi * np.floor((a + np.pi) / (2.0 * np.pi))
    # floor maps +pi to -pi; fold it back so the interval is half-open at -pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


@dataclass
class Pose2D:
    """A planar frame: position in meters, heading in radians (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        self.heading = normalize_angle(self.heading)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def rot2d(angle):
    """2x2 rotation matrix (stacked for array angle input)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotate2d(v, angle):
    """Rotate 2D vectors (..., 2) by angle (scalar or broadcastable)."""
    v = np.asarray(v, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    x = c * v[..., 0] - s * v[..., 1]
    y = s * v[..., 0] + c * v[..., 1]
    return np.stack([x, y], axis=-1)


def to_local_frame(point, frame: Pose2D) -> np.ndarray:
    """Express a world point (3,) in a planar frame.

    Horizontal coordinates are translated to the frame origin and rotated by
    -heading; the z coordinate passes through untouched (heights stay
    world-frame).
    """
    p = np.asarray(point, dtype=float)
    xy = rotate2d(p[..., :2] - np.array([frame.x, frame.y]), -frame.heading)
    return np.concatenate([xy, p[..., 2:3]], axis=-1)


def from_local_frame(point, frame: Pose2D) -> np.ndarray:
    """Inverse of :func:`to_local_frame`."""
    p = np.asarray(point, dtype=float)
    xy = rotate2d(p[..., :2], frame.heading) + np.array([frame.x, frame.y])
    return np.concatenate([xy, p[..., 2:3]], axis=-1)


def rotation6d_encode(yaw):
    """Encode a yaw rotation as the first two columns of its 3x3 matrix.

    Layout: (col0_x, col0_y, col0_z, col1_x, col1_y, col1_z).  Supports array
    yaw input, producing (..., 6).
    """
    yaw = np.asarray(yaw, dtype=float)
    c, s = np.cos(yaw), np.sin(yaw)
    z = np.zeros_like(c)
    return np.stack([c, s, z, -s, c, z], axis=-1)


def rotation6d_decode(r) -> float:
    """Recover yaw from a 6D rotation via Gram-Schmidt orthonormalization.

    Raises DegenerateRotationError when either column collapses to (near)
    zero length after projection.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (6,):
        raise ValueError(f"expected 6 scalars, got shape {r.shape}")
    a, b = r[:3], r[3:]
    na = np.linalg.norm(a)
    if na < 1e-8:
        raise DegenerateRotationError("first column has near-zero norm")
    c0 = a / na
    b_orth = b - np.dot(b, c0) * c0
    nb = np.linalg.norm(b_orth)
    if nb < 1e-8:
        raise DegenerateRotationError("columns are near-collinear")
    c1 = b_orth / nb
    # third column by cross product gives det +1; yaw read off column 0
    return math.atan2(c0[1], c0[0])


def rotation6d_matrix(r) -> np.ndarray:
    """Full orthonormal 3x3 matrix (det +1) reconstructed from 6 scalars."""
    r = np.asarray(r, dtype=float)
    a, b = r[:3], r[3:]
    na = np.linalg.norm(a)
    if na < 1e-8:
        raise DegenerateRotationError("first column has near-zero norm")
    c0 = a / na
    b_orth = b - np.dot(b, c0) * c0
    nb = np.linalg.norm(b_orth)
    if nb < 1e-8:
        raise DegenerateRotationError("columns are near-collinear")
    c1 = b_orth / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=1)


# Corner sign pattern: bottom face counter-clockwise, then top face, so vertex
# k and k+4 share the same footprint corner.
_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=float,
)


@dataclass
class OrientedBox:
    """A yaw-oriented box: center (3,), yaw about vertical, half-extents (3,)."""

    center: np.ndarray
    yaw: float
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.yaw = float(self.yaw)
        if not np.all(self.half_extents > 0.0):
            raise ValueError(f"half-extents must be strictly positive, got {self.half_extents}")

    @property
    def top(self) -> float:
        return float(self.center[2] + self.half_extents[2])


def box_vertices(box: OrientedBox) -> np.ndarray:
    """The 8 corners (8, 3), ordered bottom face CCW then top face CCW."""
    local = _CORNER_SIGNS * box.half_extents
    xy = rotate2d(local[:, :2], box.yaw) + box.center[:2]
    z = local[:, 2] + box.center[2]
    return np.concatenate([xy, z[:, None]], axis=1)


def footprint_distance(box: OrientedBox, xy) -> float | np.ndarray:
    """Euclidean distance from 2D point(s) to the box footprint (0 inside)."""
    xy = np.asarray(xy, dtype=float)
    local = rotate2d(xy - box.center[:2], -box.yaw)
    dx = np.maximum(np.abs(local[..., 0]) - box.half_extents[0], 0.0)
    dy = np.maximum(np.abs(local[..., 1]) - box.half_extents[1], 0.0)
    return np.hypot(dx, dy)


def footprint_contains(box: OrientedBox, xy, margin: float = 0.0):
    """True where 2D point(s) lie within `margin` of the box footprint."""
    return footprint_distance(box, xy) <= margin

"""Plane poses, plane-local frames and rigid transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PlanePose:
    """Oriented plane ``n . p = d`` with ``|n| = 1``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).reshape(3))
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


def normalize_pose(pose: PlanePose) -> PlanePose:
    """Scale to a unit normal and fix its sign.

    Near-horizontal normals point up (``n_z > 0``); otherwise the
    lexicographically larger of ``n`` and ``-n`` is kept.
    """
    n = np.asarray(pose.normal, dtype=float)
    norm = float(np.linalg.norm(n))
    if not np.isfinite(norm) or norm == 0.0:
        raise GeometryError("plane normal must be non-zero and finite")
    n = n / norm
    d = pose.offset / norm
    if abs(n[2]) > np.sqrt(0.5):
        flip = n[2] < 0
    else:
        flip = tuple(-n) > tuple(n)
    if flip:
        n, d = -n, -d
    # avoid negative zeros so equal poses print and compare identically
    return PlanePose(n + 0.0, d + 0.0)


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        raise GeometryError("anti-parallel normals have no unique minimal rotation")
    k = axis / s
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    angle = np.arctan2(s, c)
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def rotation_angle(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True)
class PlaneFrame:
    """Right-handed plane-local frame: columns u, v, w of ``axes``; origin on the plane.

    Local coordinates are ``axes.T @ (p - origin)``; the third one is the
    height above the plane along ``w``.
    """

    axes: np.ndarray
    origin: np.ndarray

    @staticmethod
    def from_plane(normal: np.ndarray, offset: float) -> "PlaneFrame":
        w = np.asarray(normal, dtype=float)
        w = w / np.linalg.norm(w)
        helper = np.array([1.0, 0.0, 0.0]) if abs(w[2]) > np.sqrt(0.5) else np.array([0.0, 0.0, 1.0])
        if abs(w[2]) > np.sqrt(0.5):
            u = helper - helper.dot(w) * w
        else:
            u = np.cross(helper, w)
        u /= np.linalg.norm(u)
        v = np.cross(w, u)
        return PlaneFrame(np.column_stack([u, v, w]), offset * w)

    @property
    def normal(self) -> np.ndarray:
        return self.axes[:, 2]

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) @ self.axes

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.axes.T + self.origin

    def local_to_world(self) -> RigidTransform:
        return RigidTransform(self.axes.copy(), self.origin.copy())

    def world_to_local(self) -> RigidTransform:
        return self.local_to_world().inverse()

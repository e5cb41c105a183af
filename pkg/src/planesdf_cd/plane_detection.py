"""Sequential RANSAC extraction of horizontal and vertical planes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PlanePose, normalize_pose
from .scene_io import PointCloud


@dataclass
class DetectionParams:
    inlier_tolerance: float = 0.01
    min_inliers: int = 1000
    orientation_tolerance_deg: float = 10.0
    min_plane_area: float = 0.2
    area_cell: float = 0.02
    ransac_iterations: int = 300
    ransac_sample: int = 20000
    max_planes: int = 8
    seed: int = 0


@dataclass
class DetectedPlane:
    pose: PlanePose
    inliers: np.ndarray
    orientation: str
    area: float

    @property
    def n_inliers(self) -> int:
        return len(self.inliers)


def classify_orientation(normal: np.ndarray, tolerance_deg: float) -> str | None:
    nz = abs(float(normal[2]))
    tol = math.radians(tolerance_deg)
    if nz >= math.cos(tol):
        return "horizontal"
    if nz <= math.sin(tol):
        return "vertical"
    return None


def fit_plane(points: np.ndarray) -> PlanePose:
    """Total least-squares plane through ``points``."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return normalize_pose(PlanePose(n, float(n @ c)))


def _refine(points: np.ndarray, pose: PlanePose, tol: float) -> PlanePose:
    # trimmed refits: the median residual tracks sensor noise, so points that
    # merely touch the plane (object bottoms) drop out
    for _ in range(3):
        r = np.abs(points @ pose.normal - pose.offset)
        keep = r <= min(tol, max(3.0 * float(np.median(r[r <= tol])), 1e-9))
        if keep.sum() < 3:
            break
        pose = fit_plane(points[keep])
    return pose


def support_area(local_xy: np.ndarray, cell: float) -> float:
    if len(local_xy) == 0:
        return 0.0
    cells = np.unique(np.floor(local_xy / cell).astype(np.int64), axis=0)
    return len(cells) * cell * cell


def _in_plane_coords(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return np.column_stack([points @ u, points @ v])


def detect_planes(cloud: PointCloud, params: DetectionParams | None = None) -> list[DetectedPlane]:
    """Extract-and-remove RANSAC; only axis-like planes with enough support are kept."""
    p = params or DetectionParams()
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("plane detection needs a non-empty cloud")
    rng = np.random.default_rng(p.seed)
    remaining = np.arange(len(pts))
    found: list[DetectedPlane] = []
    for _ in range(4 * p.max_planes):
        if len(found) >= p.max_planes or len(remaining) < max(p.min_inliers, 3):
            break
        sub = pts[remaining]
        probe = sub if len(sub) <= p.ransac_sample else sub[rng.choice(len(sub), p.ransac_sample, replace=False)]
        tri = rng.integers(0, len(sub), size=(p.ransac_iterations, 3))
        a, b, c = sub[tri[:, 0]], sub[tri[:, 1]], sub[tri[:, 2]]
        normals = np.cross(b - a, c - a)
        norms = np.linalg.norm(normals, axis=1)
        ok = norms > 1e-12
        if not ok.any():
            break
        normals = normals[ok] / norms[ok, None]
        offsets = np.einsum("ij,ij->i", normals, a[ok])
        counts = (np.abs(probe @ normals.T - offsets) <= p.inlier_tolerance).sum(axis=0)
        best = int(np.argmax(counts))
        pose = PlanePose(normals[best], offsets[best])
        resid = np.abs(sub @ pose.normal - pose.offset)
        inl = resid <= p.inlier_tolerance
        if inl.sum() < p.min_inliers:
            break
        pose = fit_plane(sub[inl])
        pose = _refine(sub, pose, p.inlier_tolerance)
        inl = np.abs(sub @ pose.normal - pose.offset) <= p.inlier_tolerance
        if inl.sum() < p.min_inliers:
            break
        idx = remaining[inl]
        remaining = remaining[~inl]
        orientation = classify_orientation(pose.normal, p.orientation_tolerance_deg)
        if orientation is None:
            continue
        area = support_area(_in_plane_coords(pts[idx], pose.normal), p.area_cell)
        if area < p.min_plane_area:
            continue
        found.append(DetectedPlane(pose, np.sort(idx), orientation, area))
    found.sort(key=lambda d: -d.n_inliers)
    return found

"""Cross-scene association of plane SDFs by plane pose."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import PlaneFrame, PlanePose, RigidTransform, rotation_between
from .planesdf import HeightMap, PlaneSdf


@dataclass
class PlanePairing:
    source_id: int
    target_id: int
    transform: RigidTransform
    cosine: float
    offset_gap: float


@dataclass
class MatchResult:
    pairings: list[PlanePairing]
    unmatched_source: list[int] = field(default_factory=list)
    unmatched_target: list[int] = field(default_factory=list)


def _oriented(sdf) -> tuple[np.ndarray, float]:
    if isinstance(sdf, PlaneSdf):
        return sdf.frame.normal, float(sdf.frame.normal @ sdf.frame.origin)
    pose: PlanePose = sdf
    return pose.normal, pose.offset


def admits(n_src: np.ndarray, d_src: float, n_tgt: np.ndarray, d_tgt: float,
           delta_n: float, delta_d: float) -> tuple[bool, float, float]:
    """Same-plane test: ``n . n' >= delta_n`` and ``|d - d'| <= delta_d``."""
    cos = float(np.dot(n_src, n_tgt))
    gap = abs(float(d_src) - float(d_tgt))
    return (cos >= delta_n and gap <= delta_d), cos, gap


def plane_snap(src_frame: PlaneFrame, tgt_frame: PlaneFrame) -> RigidTransform:
    """World-frame correction putting the source plane onto the target plane.

    Minimal rotation of the source normal onto the target normal, pivoting
    the source frame origin onto the target frame origin (the feet of the
    world origin on each plane). Swapping the planes gives the exact
    inverse. In-plane drift is left uncorrected.
    """
    rot = rotation_between(src_frame.normal, tgt_frame.normal)
    return RigidTransform(rot, tgt_frame.origin - rot @ src_frame.origin)


def relative_transform(src_frame: PlaneFrame, tgt_frame: PlaneFrame) -> RigidTransform:
    """Source plane-local to target plane-local coordinates."""
    snap = plane_snap(src_frame, tgt_frame)
    return tgt_frame.world_to_local().compose(snap).compose(src_frame.local_to_world())


def match_planes(source: Sequence[PlaneSdf], target: Sequence[PlaneSdf],
                 delta_n: float = 0.95, delta_d: float = 0.2) -> MatchResult:
    """Greedy one-to-one matching by decreasing cosine, then increasing offset gap."""
    cands = []
    for a, s in enumerate(source):
        ns, ds = _oriented(s)
        for b, t in enumerate(target):
            nt, dt = _oriented(t)
            ok, cos, gap = admits(ns, ds, nt, dt, delta_n, delta_d)
            if ok:
                cands.append((-cos, gap, a, b))
    cands.sort()
    used_s, used_t = set(), set()
    pairings = []
    for negcos, gap, a, b in cands:
        if a in used_s or b in used_t:
            continue
        used_s.add(a)
        used_t.add(b)
        s, t = source[a], target[b]
        pairings.append(PlanePairing(s.plane_id, t.plane_id,
                                     relative_transform(s.frame, t.frame), -negcos, gap))
    pairings.sort(key=lambda p: (p.source_id, p.target_id))
    return MatchResult(
        pairings,
        [s.plane_id for i, s in enumerate(source) if i not in used_s],
        [t.plane_id for i, t in enumerate(target) if i not in used_t],
    )


def _contour(values: np.ndarray) -> np.ndarray:
    # interior cells match themselves under small shifts and stall the ICP
    raised = values > 0
    return raised & ~ndimage.binary_erosion(raised, structure=np.ones((3, 3), dtype=bool), border_value=0)


def refine_in_plane(transform: RigidTransform, src: HeightMap, tgt: HeightMap,
                    iterations: int = 50, max_distance: float = 0.05) -> RigidTransform:
    """2D ICP on object contour cells, applied after the plane snap."""
    src_xy = src.cell_centers()[_contour(src.values)]
    tgt_xy = tgt.cell_centers()[_contour(tgt.values)]
    if len(src_xy) < 3 or len(tgt_xy) < 3:
        return transform
    tree = cKDTree(tgt_xy)
    rot2 = np.eye(2)
    trans2 = np.zeros(2)
    base = transform.apply(np.column_stack([src_xy, np.zeros(len(src_xy))]))[:, :2]
    for _ in range(iterations):
        moved = base @ rot2.T + trans2
        dist, idx = tree.query(moved, distance_upper_bound=max_distance)
        ok = np.isfinite(dist)
        if ok.sum() < 3:
            break
        p, q = base[ok], tgt_xy[idx[ok]]
        pc, qc = p.mean(axis=0), q.mean(axis=0)
        u, _, vt = np.linalg.svd((p - pc).T @ (q - qc))
        r = vt.T @ u.T
        if np.linalg.det(r) < 0:
            vt[-1] *= -1
            r = vt.T @ u.T
        t = qc - r @ pc
        if np.allclose(r, rot2) and np.allclose(t, trans2, atol=1e-9):
            break
        rot2, trans2 = r, t
    rot3 = np.eye(3)
    rot3[:2, :2] = rot2
    return RigidTransform(rot3, np.array([trans2[0], trans2[1], 0.0])).compose(transform)


def pairings_csv(pairings: Sequence[PlanePairing]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_id", "target_id", "cosine", "offset_gap"])
    for p in pairings:
        w.writerow([p.source_id, p.target_id, f"{p.cosine:.9f}", f"{p.offset_gap:.9f}"])
    return buf.getvalue()

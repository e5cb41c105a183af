"""End-to-end change detection between two scene clouds."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .change2d import BlobCandidate, ChangeMask, compare_height_maps, denoise_mask, extract_candidates
from .config import PipelineConfig
from .evaluation import EvaluationReport, score
from .geometry import RigidTransform
from .plane_detection import detect_planes
from .planesdf import HeightMap, PlaneSdf, grid_to_csv, height_map_image, instantiate, write_pgm
from .registration import MatchResult, PlanePairing, match_planes, pairings_csv, refine_in_plane
from .scene_io import PointCloud, save_point_cloud
from .validate3d import BlobVerdict, extract_changed_voxels, refine_mask, validate_blob

log = logging.getLogger(__name__)


class NoPlanesError(RuntimeError):
    pass


def build_planesdfs(cloud: PointCloud, config: PipelineConfig) -> list[PlaneSdf]:
    planes = detect_planes(cloud, config.detection())
    fusion = config.fusion()
    return [instantiate(cloud, pl, fusion, plane_id=i) for i, pl in enumerate(planes)]


@dataclass
class PairResult:
    pairing: PlanePairing
    transform: RigidTransform
    height_stage: ChangeMask
    denoised: ChangeMask
    candidates: list[BlobCandidate]
    verdicts: list[BlobVerdict]
    refined: ChangeMask
    changed_points: PointCloud


@dataclass
class DirectionResult:
    source: list[PlaneSdf]
    target: list[PlaneSdf]
    matches: MatchResult
    pairs: list[PairResult] = field(default_factory=list)

    def changed_points(self) -> PointCloud:
        return PointCloud.concatenate([p.changed_points for p in self.pairs])

    def changed_cells(self) -> int:
        return sum(p.refined.count() for p in self.pairs)


def compare_pair(src: PlaneSdf, tgt: PlaneSdf, pairing: PlanePairing, config: PipelineConfig,
                 source_heights: Optional[HeightMap] = None) -> PairResult:
    """Height comparison, denoising and 3D validation for one registered plane pair.

    ``source_heights`` replaces the source height map in the 2D stage only.
    """
    transform = pairing.transform
    if config.in_plane_icp:
        transform = refine_in_plane(transform, src.height_map, tgt.height_map)
    hmap = source_heights if source_heights is not None else src.height_map
    prelim = compare_height_maps(hmap, tgt.height_map, transform, config.delta_h)
    denoised = denoise_mask(prelim, config.min_cluster_cells, config.dilation_radius)
    cands = extract_candidates(denoised, src.object_map, config.min_overlap)
    params = config.validation()
    if config.validate_3d:
        verdicts = [validate_blob(src, tgt, transform, c, params) for c in cands]
    else:
        verdicts = [BlobVerdict(c, np.zeros((0, 3), np.int64), np.zeros(0),
                                np.zeros(params.score_bins, np.int64), 0.0, True, True) for c in cands]
    refined = refine_mask(denoised, verdicts, src.object_map)
    pts = extract_changed_voxels(src.volume, refined, config.flat_tolerance)
    return PairResult(pairing, transform, prelim, denoised, cands, verdicts, refined, pts)


def detect_direction(source: list[PlaneSdf], target: list[PlaneSdf], config: PipelineConfig) -> DirectionResult:
    matches = match_planes(source, target, config.delta_n, config.delta_d)
    by_src = {s.plane_id: s for s in source}
    by_tgt = {t.plane_id: t for t in target}
    for sid in matches.unmatched_source:
        log.info("source plane %d has no partner in the target (whole-plane-new)", sid)

    def work(p: PlanePairing) -> PairResult:
        return compare_pair(by_src[p.source_id], by_tgt[p.target_id], p, config)

    if config.workers > 1 and len(matches.pairings) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            pairs = list(pool.map(work, matches.pairings))
    else:
        pairs = [work(p) for p in matches.pairings]
    return DirectionResult(source, target, matches, pairs)


@dataclass
class DetectionRun:
    forward: Optional[DirectionResult]
    backward: Optional[DirectionResult]

    def changed_points(self) -> PointCloud:
        parts = [d.changed_points() for d in (self.forward, self.backward) if d is not None]
        return PointCloud.concatenate(parts)


def detect_changes(source: PointCloud, target: PointCloud, config: PipelineConfig,
                   direction: str = "both") -> DetectionRun:
    if direction not in ("forward", "backward", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    src = build_planesdfs(source, config)
    tgt = build_planesdfs(target, config)
    if not src or not tgt:
        which = "source" if not src else "target"
        raise NoPlanesError(f"no planes detected in the {which} cloud")
    fwd = detect_direction(src, tgt, config) if direction in ("forward", "both") else None
    bwd = detect_direction(tgt, src, config) if direction in ("backward", "both") else None
    return DetectionRun(fwd, bwd)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def write_direction(res: DirectionResult, out_dir: str, config: PipelineConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "pairings.csv"), pairings_csv(res.matches.pairings))
    _write(os.path.join(out_dir, "unmatched.csv"),
           "side,plane_id\n"
           + "".join(f"source,{i}\n" for i in res.matches.unmatched_source)
           + "".join(f"target,{i}\n" for i in res.matches.unmatched_target))
    for sdf in res.source:
        stem = os.path.join(out_dir, f"plane{sdf.plane_id}")
        _write(stem + "_height.csv", grid_to_csv(sdf.height_map.values))
        write_pgm(stem + "_height.pgm", height_map_image(sdf.height_map, config.fusing_band))
        _write(stem + "_objects.csv", grid_to_csv(sdf.object_map.labels, "{:d}"))
    for pr in res.pairs:
        stem = os.path.join(out_dir, f"pair{pr.pairing.source_id}_{pr.pairing.target_id}")
        for tag, m in (("hc", pr.height_stage), ("cc", pr.denoised), ("3d", pr.refined)):
            write_pgm(f"{stem}_mask_{tag}.pgm", m.to_image())
            _write(f"{stem}_mask_{tag}.csv", m.to_csv())
        rows = ["candidate,blob_id,overlap,key_voxels,h_avg,changed,low_evidence"]
        for v in pr.verdicts:
            c = v.candidate
            rows.append(f"{c.candidate_id},{c.blob_id},{c.overlap:.6f},{len(v.key_voxels)},"
                        f"{v.h_avg:.6f},{int(v.changed)},{int(v.low_evidence)}")
        _write(f"{stem}_verdicts.csv", "\n".join(rows) + "\n")
    save_point_cloud(res.changed_points(), os.path.join(out_dir, "changed_voxels.ply"))


def evaluate_run(run: DetectionRun, gt: PointCloud, config: PipelineConfig) -> EvaluationReport:
    return score(run.changed_points(), gt, config.match_radius, 2 * config.voxel_size)

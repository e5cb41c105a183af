"""Plane-anchored SDF volumes, height maps and object maps."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import PlaneFrame, PlanePose
from .plane_detection import DetectedPlane
from .scene_io import PointCloud

UNOBSERVED = np.nan
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class VolumeSizeError(ValueError):
    def __init__(self, required: int, allowed: int):
        self.required = required
        self.allowed = allowed
        super().__init__(f"volume needs {required} voxels, budget allows {allowed}")


@dataclass
class FusionParams:
    voxel_size: float = 0.007
    fusing_band: float = 0.3
    truncation_voxels: float = 4.0
    lower_tolerance: float = 0.01
    flat_tolerance: float = 0.015
    padding: int = 2
    max_voxels: int = 40_000_000


@dataclass
class SdfVolume:
    """Dense grid in plane-local coordinates.

    Voxel ``(i, j, k)`` has its centre at ``origin + (i + .5, j + .5, k + .5) * voxel_size``;
    ``k`` counts layers above the plane. ``phi`` is NaN where ``weight == 0``.
    """

    frame: PlaneFrame
    origin: np.ndarray
    voxel_size: float
    phi: np.ndarray
    weight: np.ndarray
    truncation: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.phi.shape)

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0

    def occupied(self) -> np.ndarray:
        return self.observed & (np.abs(np.nan_to_num(self.phi, nan=np.inf)) <= 0.5 * self.voxel_size)

    def centers_local(self, idx: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.voxel_size

    def centers_world(self, idx: np.ndarray) -> np.ndarray:
        return self.frame.to_world(self.centers_local(idx))

    def local_to_index(self, local: np.ndarray) -> np.ndarray:
        """Nearest voxel index (may lie outside the grid)."""
        return np.rint((np.asarray(local, dtype=float) - self.origin) / self.voxel_size - 0.5).astype(np.int64)


@dataclass
class HeightMap:
    values: np.ndarray
    origin: np.ndarray
    cell_size: float

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)

    def cell_centers(self) -> np.ndarray:
        """Plane-local (x, y) centre of every cell, shape ``(nx, ny, 2)``."""
        nx, ny = self.shape
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return np.stack([self.origin[0] + (ii + 0.5) * self.cell_size,
                         self.origin[1] + (jj + 0.5) * self.cell_size], axis=-1)


@dataclass
class ObjectMap:
    labels: np.ndarray
    n_blobs: int
    cells: list[np.ndarray] = field(default_factory=list)
    bboxes: list[tuple[int, int, int, int]] = field(default_factory=list)

    def blob_cells(self, blob_id: int) -> np.ndarray:
        return self.cells[blob_id - 1]


@dataclass
class PlaneSdf:
    plane_id: int
    pose: PlanePose
    facing: int
    volume: SdfVolume
    height_map: HeightMap
    object_map: ObjectMap

    @property
    def frame(self) -> PlaneFrame:
        return self.volume.frame


def _facing(normal: np.ndarray, offset: float, heights: np.ndarray, band: float, tol: float,
            orientation: str) -> int:
    if orientation != "vertical":
        return 1
    above = np.count_nonzero((heights > tol) & (heights <= band))
    below = np.count_nonzero((heights < -tol) & (heights >= -band))
    return 1 if above >= below else -1


def fuse_volume(points: np.ndarray, frame: PlaneFrame, params: FusionParams,
                extent_points: np.ndarray | None = None) -> SdfVolume:
    """Truncated point-distance SDF of the points lying in the band above ``frame``."""
    vs = params.voxel_size
    local = frame.to_local(points) if len(points) else np.zeros((0, 3))
    h = local[:, 2]
    band = (h >= -params.lower_tolerance) & (h <= params.fusing_band)
    contrib = local[band]
    xy = contrib[:, :2]
    if extent_points is not None and len(extent_points):
        xy = np.concatenate([xy, frame.to_local(extent_points)[:, :2]])
    nz = int(math.ceil(params.fusing_band / vs - 1e-9))
    if len(xy) == 0:
        lo = np.zeros(2, dtype=np.int64)
        hi = np.zeros(2, dtype=np.int64)
    else:
        lo = np.floor(xy.min(axis=0) / vs).astype(np.int64) - params.padding
        hi = np.floor(xy.max(axis=0) / vs).astype(np.int64) + params.padding
    nx, ny = (hi - lo + 1).tolist()
    total = nx * ny * nz
    if total > params.max_voxels:
        raise VolumeSizeError(total, params.max_voxels)
    origin = np.array([lo[0] * vs, lo[1] * vs, 0.0])

    ix = np.floor((contrib[:, 0] - origin[0]) / vs).astype(np.int64)
    iy = np.floor((contrib[:, 1] - origin[1]) / vs).astype(np.int64)
    iz = np.clip(np.floor(np.maximum(contrib[:, 2], 0.0) / vs).astype(np.int64), 0, nz - 1)
    occupied = np.zeros((nx, ny, nz), dtype=bool)
    occupied[ix, iy, iz] = True
    observed_cols = occupied.any(axis=2)
    # objects rising out of the band leave their interior columns empty;
    # cap such enclosed holes at the band top so they read as solid
    layer_h = (np.arange(nz) + 0.5) * vs
    raised = (occupied & (layer_h > params.flat_tolerance)[None, None, :]).any(axis=2)
    holes = ndimage.binary_fill_holes(raised) & ~observed_cols
    if holes.any():
        top_layer = np.where(observed_cols, nz - 1 - np.argmax(occupied[:, :, ::-1], axis=2), -1)
        comp, n = ndimage.label(holes, structure=EIGHT_CONNECTED)
        for c in range(1, n + 1):
            region = comp == c
            ring = ndimage.binary_dilation(region, structure=EIGHT_CONNECTED) & ~region
            # only walls that leave the band; sparse gaps in low tops stay unobserved
            if np.median(top_layer[ring]) >= nz - 2:
                occupied[region, nz - 1] = True
                observed_cols |= region

    trunc = params.truncation_voxels * vs
    if occupied.any():
        dist = ndimage.distance_transform_edt(~occupied, sampling=vs)
        phi = np.minimum(dist, trunc)
    else:
        phi = np.full((nx, ny, nz), trunc)
    # below the topmost surface of a column is inside matter
    top = np.where(observed_cols, nz - 1 - np.argmax(occupied[:, :, ::-1], axis=2), -1)
    below = np.arange(nz)[None, None, :] < top[:, :, None]
    phi = np.where(below & ~occupied, -phi, phi)
    weight = np.broadcast_to(observed_cols[:, :, None], phi.shape).astype(np.float64)
    phi = np.where(weight > 0, phi, UNOBSERVED)
    return SdfVolume(frame, origin, vs, phi, weight, trunc)


def compute_height_map(volume: SdfVolume, flat_tolerance: float = 0.015) -> HeightMap:
    """Per column: top occupied height, 0 if observed but flat, -1 if unobserved."""
    vs = volume.voxel_size
    occ = volume.occupied()
    nz = occ.shape[2]
    heights = (np.arange(nz) + 0.5) * vs
    top = np.where(occ, heights[None, None, :], -np.inf).max(axis=2)
    observed = volume.observed.any(axis=2)
    values = np.where(observed, 0.0, -1.0)
    raised = np.isfinite(top) & (top > flat_tolerance)
    values = np.where(raised, top, values)
    return HeightMap(values, volume.origin[:2].copy(), vs)


def label_objects(height_map: HeightMap | np.ndarray) -> ObjectMap:
    """8-connected components of cells with positive height, labelled in row-major order."""
    values = height_map.values if isinstance(height_map, HeightMap) else np.asarray(height_map)
    labels, n = ndimage.label(values > 0, structure=EIGHT_CONNECTED)
    labels = labels.astype(np.int32)
    cells, boxes = [], []
    if n:
        flat = labels.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
        for b in range(n):
            lin = order[bounds[b]:bounds[b + 1]]
            ij = np.column_stack(np.unravel_index(lin, labels.shape))
            cells.append(ij)
            boxes.append((int(ij[:, 0].min()), int(ij[:, 1].min()),
                          int(ij[:, 0].max()), int(ij[:, 1].max())))
    return ObjectMap(labels, int(n), cells, boxes)


def instantiate(cloud: PointCloud, plane: DetectedPlane, params: FusionParams | None = None,
                plane_id: int = 0) -> PlaneSdf:
    """Fuse every band point of ``cloud`` into a volume anchored on ``plane``.

    Points are not consumed: a point may contribute to several planes.
    """
    p = params or FusionParams()
    pose = plane.pose
    heights = cloud.points @ pose.normal - pose.offset
    facing = _facing(pose.normal, pose.offset, heights, p.fusing_band, p.lower_tolerance,
                     plane.orientation)
    frame = PlaneFrame.from_plane(facing * pose.normal, facing * pose.offset)
    volume = fuse_volume(cloud.points, frame, p, extent_points=cloud.points[plane.inliers])
    hmap = compute_height_map(volume, p.flat_tolerance)
    return PlaneSdf(plane_id, pose, facing, volume, hmap, label_objects(hmap))


# ---------------------------------------------------------------------------
# exports

def grid_to_csv(grid: np.ndarray, fmt: str = "{:.6g}") -> str:
    lines = [",".join(fmt.format(v) for v in row) for row in np.asarray(grid)]
    return "\n".join(lines) + "\n"


def write_pgm(path: str, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def height_map_image(hmap: HeightMap, band: float) -> np.ndarray:
    v = hmap.values
    scaled = 1 + np.rint(254 * np.clip(v, 0, band) / band)
    return np.where(v < 0, 0, scaled).astype(np.uint8)


_MAGIC = b"PSDF"
_VERSION = 1
_HEADER = struct.Struct("<4sH3I d 3d 9d 3d d")


def serialize_volume(volume: SdfVolume, pose: PlanePose) -> bytes:
    """Versioned little-endian layout: header, then phi and weight as float32."""
    nx, ny, nz = volume.shape
    head = _HEADER.pack(
        _MAGIC, _VERSION, nx, ny, nz, volume.voxel_size, *volume.origin.tolist(),
        *volume.frame.axes.ravel().tolist(), *volume.frame.origin.tolist(), volume.truncation,
    )
    pose_bytes = struct.pack("<4d", *pose.normal.tolist(), pose.offset)
    buf = io.BytesIO()
    buf.write(head)
    buf.write(pose_bytes)
    buf.write(volume.phi.astype("<f4").tobytes(order="C"))
    buf.write(volume.weight.astype("<f4").tobytes(order="C"))
    return buf.getvalue()


def deserialize_volume(data: bytes) -> tuple[SdfVolume, PlanePose]:
    fields = _HEADER.unpack_from(data, 0)
    magic, version = fields[0], fields[1]
    if magic != _MAGIC:
        raise ValueError("bad volume magic")
    if version != _VERSION:
        raise ValueError(f"unsupported volume version {version}")
    nx, ny, nz = fields[2:5]
    vs = fields[5]
    origin = np.array(fields[6:9])
    axes = np.array(fields[9:18]).reshape(3, 3)
    frame_origin = np.array(fields[18:21])
    trunc = fields[21]
    off = _HEADER.size
    pose_vals = struct.unpack_from("<4d", data, off)
    off += 32
    n = nx * ny * nz
    phi = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(nx, ny, nz)
    off += 4 * n
    weight = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(nx, ny, nz)
    vol = SdfVolume(PlaneFrame(axes, frame_origin), origin, vs, phi, weight, trunc)
    return vol, PlanePose(np.array(pose_vals[:3]), pose_vals[3])

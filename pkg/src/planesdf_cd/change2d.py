"""Height-map differencing into a ternary change mask, and candidate extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import RigidTransform
from .planesdf import EIGHT_CONNECTED, HeightMap, ObjectMap

UNKNOWN = -1
UNCHANGED = 0
CHANGED = 1


class MaskShapeError(ValueError):
    pass


@dataclass
class ChangeMask:
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.states.shape)

    @property
    def changed(self) -> np.ndarray:
        return self.states == CHANGED

    def count(self, state: int = CHANGED) -> int:
        return int(np.count_nonzero(self.states == state))

    def copy(self) -> "ChangeMask":
        return ChangeMask(self.states.copy())

    def to_image(self) -> np.ndarray:
        lut = {UNKNOWN: 0, UNCHANGED: 128, CHANGED: 255}
        img = np.zeros(self.states.shape, dtype=np.uint8)
        for k, v in lut.items():
            img[self.states == k] = v
        return img

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.states) + "\n"


@dataclass
class BlobCandidate:
    """Changed cells grouped per object blob.

    ``blob_id`` is 0 for synthetic candidates built from changed cells that
    lie on no blob; their footprint is the component itself. ``halo`` holds
    off-blob changed cells touching the blob, which follow its verdict.
    """

    candidate_id: int
    blob_id: int
    cells: np.ndarray
    footprint: np.ndarray
    overlap: float
    halo: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def synthetic(self) -> bool:
        return self.blob_id == 0

    def all_cells(self) -> np.ndarray:
        return np.concatenate([self.footprint, self.halo]) if len(self.halo) else self.footprint


def project_cells(src: HeightMap, tgt: HeightMap, transform: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    """Continuous target-grid coordinates of each source cell centre (cell centres at integers)."""
    centers = src.cell_centers().reshape(-1, 2)
    local = np.column_stack([centers, np.zeros(len(centers))])
    moved = transform.apply(local)
    gx = (moved[:, 0] - tgt.origin[0]) / tgt.cell_size - 0.5
    gy = (moved[:, 1] - tgt.origin[1]) / tgt.cell_size - 0.5
    return gx.reshape(src.shape), gy.reshape(src.shape)


def _axis_weights(frac: np.ndarray, eps: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    return frac < 1.0 - eps, frac > eps


def compare_height_maps(src: HeightMap, tgt: HeightMap, transform: RigidTransform,
                        delta_h: float = 0.02) -> ChangeMask:
    """Four-neighbour height test of every observed source cell.

    A cell is changed when none of the usable target neighbours lies within
    ``delta_h`` of its height, unchanged when at least one does. Neighbours
    outside the target grid, unobserved there, or carrying zero bilinear
    weight are not usable; a cell with no usable neighbour is unknown.
    """
    if not np.isclose(src.cell_size, tgt.cell_size):
        raise MaskShapeError(f"cell sizes differ: {src.cell_size} vs {tgt.cell_size}")
    rot = np.asarray(transform.rotation)
    if rot.shape != (3, 3):
        raise MaskShapeError("transform must be a 3D rigid transform")
    H = src.values
    gx, gy = project_cells(src, tgt, transform)
    fx = np.floor(gx).astype(np.int64)
    fy = np.floor(gy).astype(np.int64)
    # a neighbour with zero bilinear weight does not surround the point; on
    # aligned grids this keeps the test cell-to-cell and direction-symmetric
    wx = _axis_weights(gx - fx)
    wy = _axis_weights(gy - fy)
    tnx, tny = tgt.shape
    n_usable = np.zeros(H.shape, dtype=np.int32)
    n_within = np.zeros(H.shape, dtype=np.int32)
    for i in (0, 1):
        for j in (0, 1):
            x, y = fx + i, fy + j
            inside = (x >= 0) & (x < tnx) & (y >= 0) & (y < tny) & wx[i] & wy[j]
            h2 = np.full(H.shape, -1.0)
            h2[inside] = tgt.values[x[inside], y[inside]]
            usable = inside & (h2 >= 0)
            n_usable += usable
            n_within += usable & (np.abs(h2 - H) <= delta_h)
    states = np.where(n_within >= 1, UNCHANGED, CHANGED)
    states = np.where(n_usable == 0, UNKNOWN, states)
    states = np.where(H < 0, UNKNOWN, states)
    return ChangeMask(states)


def denoise_mask(mask: ChangeMask, min_cluster_cells: int = 12, dilation_radius: int = 2) -> ChangeMask:
    """Drop changed clusters below ``min_cluster_cells``, then dilate the rest over known cells."""
    states = mask.states.copy()
    changed = states == CHANGED
    labels, n = ndimage.label(changed, structure=EIGHT_CONNECTED)
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        small = sizes < min_cluster_cells
        small[0] = False
        states[small[labels]] = UNCHANGED
    keep = states == CHANGED
    if dilation_radius > 0 and keep.any():
        k = 2 * dilation_radius + 1
        grown = ndimage.binary_dilation(keep, structure=np.ones((k, k), dtype=bool))
        states[grown & (states == UNCHANGED)] = CHANGED
    return ChangeMask(states)


def extract_candidates(mask: ChangeMask, objects: ObjectMap, min_overlap: float = 0.3) -> list[BlobCandidate]:
    if mask.shape != tuple(objects.labels.shape):
        raise MaskShapeError(f"mask {mask.shape} and object map {objects.labels.shape} differ")
    changed = mask.changed
    cands: list[BlobCandidate] = []
    for b in range(1, objects.n_blobs + 1):
        cells = objects.blob_cells(b)
        hit = changed[cells[:, 0], cells[:, 1]]
        if not hit.any():
            continue
        ratio = float(hit.mean())
        if ratio >= min_overlap:
            cands.append(BlobCandidate(len(cands) + 1, b, cells[hit], cells, ratio))

    off = changed & (objects.labels == 0)
    comp, n = ndimage.label(off, structure=EIGHT_CONNECTED)
    if n == 0:
        return cands
    owner = np.zeros(objects.labels.shape, dtype=np.int64)
    for c in cands:
        owner[c.footprint[:, 0], c.footprint[:, 1]] = c.candidate_id
    by_id = {c.candidate_id: c for c in cands}
    synthetic = []
    for k in range(1, n + 1):
        region = comp == k
        cells = np.argwhere(region)
        ring = ndimage.binary_dilation(region, structure=EIGHT_CONNECTED) & ~region
        touching = np.unique(owner[ring])
        touching = touching[touching > 0]
        if len(touching):
            c = by_id[int(touching[0])]
            c.halo = np.concatenate([c.halo, cells]) if len(c.halo) else cells
        else:
            synthetic.append(cells)
    for cells in synthetic:
        cands.append(BlobCandidate(len(cands) + 1, 0, cells, cells, 1.0))
    return cands

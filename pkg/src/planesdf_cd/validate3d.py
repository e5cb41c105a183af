"""Per-blob 3D validation of height-map changes on SDF curvature features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .change2d import CHANGED, UNCHANGED, BlobCandidate, ChangeMask
from .eigen import eigh3
from .geometry import RigidTransform
from .planesdf import ObjectMap, PlaneSdf, SdfVolume
from .scene_io import PointCloud

SOBEL_DERIV = np.array([-1.0, 0.0, 1.0])
SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
# 1D factors of the composed (Sobel * Sobel) kernels along one axis
_DD = np.convolve(SOBEL_DERIV, SOBEL_DERIV)
_DS = np.convolve(SOBEL_DERIV, SOBEL_SMOOTH)
_SS = np.convolve(SOBEL_SMOOTH, SOBEL_SMOOTH)
_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_OFFSETS = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])
# neighbourhood margin needed around a key voxel: features over 3^3, each Hessian over 5^3
_MARGIN = 4


@dataclass
class ValidationParams:
    n_theta: int = 5
    n_phi: int = 5
    n_lambda: int = 6
    alpha: float = 2.0
    delta_blob: float = 0.9
    sdf_sigma: float = 2.0
    doh_floor: float = 1e-6
    max_key_voxels: int = 512
    missing_score: float = 1e-3
    score_bins: int = 10
    eig_eps: float = 1e-12
    lambda_min_span: float = 1e-9

    @property
    def feature_length(self) -> int:
        return 3 * self.n_theta * self.n_phi * self.n_lambda + 1


@dataclass
class BlobVerdict:
    candidate: BlobCandidate
    key_voxels: np.ndarray
    scores: np.ndarray
    histogram: np.ndarray
    h_avg: float
    changed: bool
    low_evidence: bool = False
    debug: list = field(default_factory=list)

    @property
    def blob_id(self) -> int:
        return self.candidate.blob_id


def composed_kernel_1d(i: int, j: int, axis: int) -> np.ndarray:
    di, dj = axis == i, axis == j
    if di and dj:
        return _DD
    if di or dj:
        return _DS
    return _SS


def hessian_field(phi: np.ndarray) -> np.ndarray:
    """Sobel-of-Sobel Hessian of every voxel, shape ``phi.shape + (3, 3)``.

    NaN wherever the 5x5x5 support leaves the grid or touches an unobserved voxel.
    """
    phi = np.asarray(phi, dtype=float)
    out = np.empty(phi.shape + (3, 3))
    for i, j in _PAIRS:
        acc = phi
        for axis in range(3):
            acc = ndimage.correlate1d(acc, composed_kernel_1d(i, j, axis), axis=axis,
                                      mode="constant", cval=np.nan)
        out[..., i, j] = acc
        out[..., j, i] = acc
    return out


def _crop(phi: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """``phi[lo:hi]`` with NaN outside the grid."""
    shape = tuple((hi - lo).tolist())
    out = np.full(shape, np.nan)
    src_lo = np.maximum(lo, 0)
    src_hi = np.minimum(hi, phi.shape)
    if np.any(src_hi <= src_lo):
        return out
    dst_lo = src_lo - lo
    dst_hi = dst_lo + (src_hi - src_lo)
    out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
        phi[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return out


def hessian_at(volume: SdfVolume | np.ndarray, v) -> Optional[np.ndarray]:
    """Hessian at voxel ``v``, or None if its 5x5x5 support is incomplete.

    With ``v`` of shape ``(K, 3)`` returns ``(K, 3, 3)``, NaN where incomplete.
    """
    phi = volume.phi if isinstance(volume, SdfVolume) else np.asarray(volume, dtype=float)
    v = np.asarray(v, dtype=np.int64)
    if v.ndim == 2:
        if len(v) == 0:
            return np.zeros((0, 3, 3))
        lo = v.min(axis=0) - 2
        field = hessian_field(_crop(phi, lo, v.max(axis=0) + 3))
        rel = v - lo
        return field[rel[:, 0], rel[:, 1], rel[:, 2]].copy()
    block = _crop(phi, v - 2, v + 3)
    if not np.all(np.isfinite(block)):
        return None
    return hessian_field(block)[2, 2, 2].copy()


def doh(hess: np.ndarray) -> np.ndarray:
    h = hess
    return (h[..., 0, 0] * (h[..., 1, 1] * h[..., 2, 2] - h[..., 1, 2] * h[..., 2, 1])
            - h[..., 0, 1] * (h[..., 1, 0] * h[..., 2, 2] - h[..., 1, 2] * h[..., 2, 0])
            + h[..., 0, 2] * (h[..., 1, 0] * h[..., 2, 1] - h[..., 1, 1] * h[..., 2, 0]))


@dataclass
class _Region:
    lo: np.ndarray
    phi: np.ndarray
    hess: np.ndarray


def _region(volume: SdfVolume, lo: np.ndarray, hi: np.ndarray) -> _Region:
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    phi = _crop(volume.phi, lo, hi)
    return _Region(lo, phi, hessian_field(phi))


def _key_voxels_in_region(reg: _Region, columns: np.ndarray, params: ValidationParams) -> np.ndarray:
    det = np.abs(doh(reg.hess))
    finite = np.isfinite(det)
    ranked = np.where(finite, det, -np.inf)
    ring = np.ones((3, 3, 3), dtype=bool)
    ring[1, 1, 1] = False
    neigh_max = ndimage.maximum_filter(ranked, footprint=ring, mode="constant", cval=-np.inf)
    # the whole 3^3 neighbourhood must carry valid Hessians
    complete = ndimage.minimum_filter(finite.astype(np.uint8), size=3, mode="constant", cval=0) > 0
    ok = complete & (ranked > neigh_max) & (ranked >= params.doh_floor)
    in_cols = np.zeros(ok.shape[:2], dtype=bool)
    cols = columns - reg.lo[:2]
    inside = np.all((cols >= 0) & (cols < ok.shape[:2]), axis=1)
    cols = cols[inside]
    in_cols[cols[:, 0], cols[:, 1]] = True
    ok &= in_cols[:, :, None]
    idx = np.argwhere(ok)
    if len(idx) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    vals = det[ok]
    lin = np.ravel_multi_index(idx.T, ok.shape)
    order = np.lexsort((lin, -vals))[: params.max_key_voxels]
    return idx[order] + reg.lo


def _footprint_region(volume: SdfVolume, columns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nz = volume.shape[2]
    lo = np.array([columns[:, 0].min() - _MARGIN, columns[:, 1].min() - _MARGIN, 0])
    hi = np.array([columns[:, 0].max() + _MARGIN + 1, columns[:, 1].max() + _MARGIN + 1, nz])
    return lo, hi


def select_key_voxels(volume: SdfVolume, blob: BlobCandidate | np.ndarray,
                      params: ValidationParams | None = None) -> np.ndarray:
    """Strict local maxima of ``|det Hess|`` above the blob footprint, strongest first."""
    p = params or ValidationParams()
    columns = blob.footprint if isinstance(blob, BlobCandidate) else np.asarray(blob)
    if len(columns) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    lo, hi = _footprint_region(volume, columns)
    return _key_voxels_in_region(_region(volume, lo, hi), columns, p)


def fold_directions(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axis directions ``(..., 3)`` to (theta, phi) in degrees with e and -e identified."""
    v = np.where(np.abs(vecs) < 1e-9, 0.0, vecs)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    flip = (y < 0) | ((y == 0) & (x < 0)) | ((y == 0) & (x == 0) & (z < 0))
    s = np.where(flip, -1.0, 1.0)
    x, y, z = x * s, y * s, z * s
    theta = np.degrees(np.arctan2(y, x))
    theta = np.where(theta < 0, 0.0, theta)
    phi = np.degrees(np.arcsin(np.clip(z, -1.0, 1.0)))
    return theta, phi


def _bin(values: np.ndarray, lo, hi, n: int, min_span: float = 0.0) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    span = hi - lo
    wide = span > min_span
    safe = np.where(wide, span, 1.0)
    idx = np.floor((values - lo) / safe * n)
    idx = np.where(wide, idx, 0)
    return np.clip(idx, 0, n - 1).astype(np.int64)


def _gaussian_weights(sigma: float) -> np.ndarray:
    d2 = (_OFFSETS ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def features_from_blocks(hess: np.ndarray, phi: np.ndarray, params: ValidationParams,
                         shared_bins: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Batched features: ``hess`` is ``(K, 27, 3, 3)``, ``phi`` is ``(K, 27)`` in ``_OFFSETS`` order.

    Returns ``(K, L)`` features and ``(K, 3, 2)`` lambda-bin ranges.
    """
    p = params
    k = len(hess)
    vals, vecs = eigh3(hess)
    vals = vals / (np.abs(vals).sum(axis=-1, keepdims=True) + p.eig_eps)
    if shared_bins is None:
        bins = np.stack([vals.min(axis=1), vals.max(axis=1)], axis=-1)
    else:
        bins = np.broadcast_to(np.asarray(shared_bins, dtype=float), (k, 3, 2)).copy()
    n_cell = p.n_theta * p.n_phi * p.n_lambda
    hist = np.zeros((k, 3 * n_cell))
    rows = np.repeat(np.arange(k), 27)
    for i in range(3):
        theta, phi_ang = fold_directions(vecs[:, :, :, i])
        ti = _bin(theta, 0.0, 180.0, p.n_theta)
        pi = _bin(phi_ang, -90.0, 90.0, p.n_phi)
        # ranges narrower than round-off would scatter equal eigenvalues over all bins
        li = _bin(vals[:, :, i], bins[:, i, 0:1], bins[:, i, 1:2], p.n_lambda, p.lambda_min_span)
        flat = i * n_cell + (ti * p.n_phi + pi) * p.n_lambda + li
        np.add.at(hist, (rows, flat.ravel()), 1.0)
    w = _gaussian_weights(p.sdf_sigma)
    s = (phi * w).sum(axis=1) / w.sum()
    return np.concatenate([hist, s[:, None]], axis=1), bins


def _gather(reg: _Region, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hessians and SDF values over each centre's 3^3 neighbourhood; ``ok`` marks complete ones."""
    idx = centers[:, None, :] - reg.lo + _OFFSETS[None, :, :]
    shape = np.array(reg.phi.shape)
    inside = np.all((idx >= 0) & (idx < shape), axis=2)
    safe = np.where(inside[..., None], idx, 0)
    hess = reg.hess[safe[..., 0], safe[..., 1], safe[..., 2]]
    phi = reg.phi[safe[..., 0], safe[..., 1], safe[..., 2]]
    ok = inside.all(axis=1) & np.isfinite(hess).reshape(len(centers), -1).all(axis=1) \
        & np.isfinite(phi).all(axis=1)
    return np.nan_to_num(hess), np.nan_to_num(phi), ok


def build_feature(volume: SdfVolume, v0, shared_bins: Optional[np.ndarray] = None,
                  params: ValidationParams | None = None):
    """Feature of one voxel: eigenpair histograms plus Gaussian-weighted SDF.

    Returns ``(feature, bins)`` or None when the neighbourhood is incomplete.
    """
    p = params or ValidationParams()
    v0 = np.asarray(v0, dtype=np.int64)
    reg = _region(volume, v0 - _MARGIN + 1, v0 + _MARGIN)
    hess, phi, ok = _gather(reg, v0[None, :])
    if not ok[0]:
        return None
    f, bins = features_from_blocks(hess, phi, p, None if shared_bins is None else shared_bins[None])
    return f[0], bins[0]


def similarity(f: np.ndarray, g: np.ndarray, alpha: float = 2.0) -> float | np.ndarray:
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[-1] != g.shape[-1]:
        raise ValueError(f"feature lengths differ: {f.shape[-1]} vs {g.shape[-1]}")
    dist = np.linalg.norm(f - g, axis=-1)
    out = 1.0 / (1.0 + alpha * dist)
    # tiny distances round to 1; keep 1 for identical features only
    differ = np.any(f != g, axis=-1)
    out = np.where(differ & (out >= 1.0), np.nextafter(1.0, 0.0), out)
    return float(out) if np.ndim(out) == 0 else out


def score_histogram(scores: np.ndarray, n_bins: int = 10) -> tuple[np.ndarray, float]:
    """Counts over ``n_bins`` uniform bins of (0, 1] and the midpoint-weighted mean."""
    scores = np.asarray(scores, dtype=float)
    idx = np.clip(np.ceil(scores * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    mids = (np.arange(n_bins) + 0.5) / n_bins
    h_avg = float((mids * counts).sum() / counts.sum()) if counts.sum() else 0.0
    return counts, h_avg


def validate_blob(src: PlaneSdf, tgt: PlaneSdf, transform: RigidTransform, blob: BlobCandidate,
                  params: ValidationParams | None = None, debug: bool = False) -> BlobVerdict:
    p = params or ValidationParams()
    vol, tvol = src.volume, tgt.volume
    if len(blob.footprint) == 0:
        return BlobVerdict(blob, np.zeros((0, 3), np.int64), np.zeros(0),
                           np.zeros(p.score_bins, np.int64), 0.0, True, True)
    lo, hi = _footprint_region(vol, blob.footprint)
    reg = _region(vol, lo, hi)
    keys = _key_voxels_in_region(reg, blob.footprint, p)
    if len(keys) == 0:
        # nothing to compare: the 2D evidence stands
        return BlobVerdict(blob, keys, np.zeros(0), np.zeros(p.score_bins, np.int64), 0.0, True, True)

    hess, phi, ok = _gather(reg, keys)
    feats, bins = features_from_blocks(hess, phi, p)

    local = transform.apply(vol.centers_local(keys))
    tkeys = tvol.local_to_index(local)
    tlo = tkeys.min(axis=0) - _MARGIN
    thi = tkeys.max(axis=0) + _MARGIN + 1
    treg = _region(tvol, tlo, thi)
    thess, tphi, tok = _gather(treg, tkeys)
    tfeats, _ = features_from_blocks(thess, tphi, p, shared_bins=bins)

    scores = np.full(len(keys), p.missing_score)
    scores[tok] = similarity(feats[tok], tfeats[tok], p.alpha)
    counts, h_avg = score_histogram(scores, p.score_bins)
    verdict = BlobVerdict(blob, keys, scores, counts, h_avg, h_avg < p.delta_blob)
    if debug:
        verdict.debug = [(tuple(int(c) for c in k), float(d), float(s))
                         for k, d, s in zip(keys, doh(hess[:, 13]), scores)]
    return verdict


def refine_mask(mask: ChangeMask, verdicts: Sequence[BlobVerdict], objects: ObjectMap) -> ChangeMask:
    """Apply blob verdicts: changed blobs become fully changed, the rest are cleared."""
    states = mask.states.copy()
    judged = {v.candidate.blob_id for v in verdicts if not v.candidate.synthetic}
    for b in range(1, objects.n_blobs + 1):
        if b not in judged:
            cells = objects.blob_cells(b)
            sel = states[cells[:, 0], cells[:, 1]] == CHANGED
            states[cells[sel, 0], cells[sel, 1]] = UNCHANGED
    for v in verdicts:
        c = v.candidate
        cells = c.all_cells()
        if v.changed:
            states[c.footprint[:, 0], c.footprint[:, 1]] = CHANGED
        else:
            sel = states[cells[:, 0], cells[:, 1]] == CHANGED
            states[cells[sel, 0], cells[sel, 1]] = UNCHANGED
    return ChangeMask(states)


RED = np.array([255, 0, 0], dtype=np.uint8)


def extract_changed_voxels(volume: SdfVolume, mask: ChangeMask, flat_tolerance: float = 0.015) -> PointCloud:
    """World-frame centres of occupied voxels above changed cells (plane surface excluded)."""
    occ = volume.occupied() & mask.changed[:, :, None]
    heights = (np.arange(volume.shape[2]) + 0.5) * volume.voxel_size
    occ &= (heights > flat_tolerance)[None, None, :]
    idx = np.argwhere(occ)
    if len(idx) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))
    pts = volume.centers_world(idx)
    return PointCloud(pts, np.tile(RED, (len(pts), 1)))

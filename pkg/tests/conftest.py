import functools

import numpy as np
import pytest

from planesdf_cd.config import PipelineConfig
from planesdf_cd.geometry import PlaneFrame, PlanePose
from planesdf_cd.pipeline import build_planesdfs
from planesdf_cd.planesdf import HeightMap, ObjectMap, PlaneSdf, SdfVolume
from planesdf_cd.scene_io import generate_scene_pair, make_scenario


@functools.lru_cache(maxsize=None)
def scene(kind, seed, noise=0.0):
    scn = make_scenario(kind, seed, noise_sigma=noise)
    src, tgt, gt = generate_scene_pair(scn, seed)
    return scn, src, tgt, gt


@functools.lru_cache(maxsize=None)
def planesdfs(kind, seed, which="source"):
    _, src, tgt, _ = scene(kind, seed)
    return build_planesdfs(src if which == "source" else tgt, PipelineConfig())


def table_sdf(sdfs):
    """The horizontal plane carrying objects."""
    return next(s for s in sdfs if s.object_map.n_blobs > 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def stub_plane(pid, n, d):
    """A PlaneSdf carrying only a pose, for registration tests."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    frame = PlaneFrame.from_plane(n, d)
    vol = SdfVolume(frame, np.zeros(3), 0.007, np.zeros((1, 1, 1)), np.ones((1, 1, 1)), 0.028)
    hm = HeightMap(np.zeros((1, 1)), np.zeros(2), 0.007)
    return PlaneSdf(pid, PlanePose(n, d), 1, vol, hm, ObjectMap(np.zeros((1, 1), np.int32), 0))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from oracles import height_compare
from planesdf_cd.change2d import (CHANGED, UNCHANGED, UNKNOWN, ChangeMask, MaskShapeError, compare_height_maps,
                                  denoise_mask, extract_candidates)
from planesdf_cd.geometry import RigidTransform
from planesdf_cd.planesdf import HeightMap, label_objects

CS = 0.007


def hm(vals, origin=(0.0, 0.0)):
    return HeightMap(np.asarray(vals, dtype=float), np.asarray(origin, dtype=float), CS)


def single_cell(h, neighbours):
    """Source 1x1 map whose cell centre projects between four target cells."""
    src = hm([[h]], origin=(0.5 * CS, 0.5 * CS))
    tgt = hm(np.asarray(neighbours, dtype=float).reshape(2, 2))
    return compare_height_maps(src, tgt, RigidTransform.identity(), 0.02).states[0, 0]


def test_all_neighbours_flat_is_changed():
    assert single_cell(0.10, [0, 0, 0, 0]) == CHANGED


def test_one_neighbour_within_is_unchanged():
    assert single_cell(0.10, [0.10, 0, 0, 0]) == UNCHANGED


def test_all_neighbours_unobserved_is_unknown():
    assert single_cell(0.05, [-1, -1, -1, -1]) == UNKNOWN


def test_unobserved_source_is_unknown():
    assert single_cell(-1, [0, 0, 0, 0]) == UNKNOWN


def test_unobserved_neighbours_excluded():
    assert single_cell(0.10, [-1, 0.0, -1, -1]) == CHANGED
    assert single_cell(0.10, [-1, 0.11, -1, -1]) == UNCHANGED


def test_threshold_inclusive():
    assert single_cell(0.0625, [0.0425, 0, 0, 0]) == UNCHANGED


def test_cell_size_mismatch():
    with pytest.raises(MaskShapeError):
        compare_height_maps(hm(np.zeros((2, 2))), HeightMap(np.zeros((2, 2)), np.zeros(2), 0.01),
                            RigidTransform.identity())


def random_pair(rng, n=32):
    def grid():
        g = np.where(rng.random((n, n)) < 0.6, 0.0, rng.uniform(0.0, 0.3, (n, n)))
        g[rng.random((n, n)) < 0.1] = -1.0
        return g
    ang = rng.uniform(-0.3, 0.3)
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    trans = np.array([*rng.uniform(-0.03, 0.03, 2), 0.0])
    return grid(), grid(), rng.uniform(-0.01, 0.01, 2), rng.uniform(-0.01, 0.01, 2), rot, trans


@pytest.mark.parametrize("seed", range(20))
def test_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b, oa, ob, rot, trans = random_pair(rng, 16)
    got = compare_height_maps(hm(a, oa), hm(b, ob), RigidTransform(rot, trans), 0.02).states
    want = height_compare(a, oa, b, ob, CS, rot, trans, 0.02)
    np.testing.assert_array_equal(got, want)


def test_self_comparison_is_null():
    rng = np.random.default_rng(0)
    a = np.where(rng.random((20, 20)) < 0.5, 0.0, rng.uniform(0, 0.3, (20, 20)))
    m = compare_height_maps(hm(a), hm(a), RigidTransform.identity())
    assert m.count(CHANGED) == 0


# -- denoising ---------------------------------------------------------------

def test_isolated_cell_removed():
    s = np.zeros((7, 7), dtype=int)
    s[3, 3] = CHANGED
    out = denoise_mask(ChangeMask(s), 5, 1)
    assert out.count(CHANGED) == 0


def test_cluster_kept_and_grown():
    s = np.zeros((10, 10), dtype=int)
    s[4:6, 3:6] = CHANGED
    out = denoise_mask(ChangeMask(s), 5, 1)
    expect = np.zeros((10, 10), dtype=bool)
    expect[3:7, 2:7] = True
    np.testing.assert_array_equal(out.changed, expect)


def test_empty_mask_identity():
    s = np.zeros((5, 5), dtype=int)
    s[0, 0] = UNKNOWN
    out = denoise_mask(ChangeMask(s))
    np.testing.assert_array_equal(out.states, s)


@settings(max_examples=100, deadline=None)
@given(arrays(np.int8, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.integers(-1, 1)),
       st.integers(1, 8), st.integers(0, 3))
def test_denoise_properties(states, min_cells, radius):
    m = ChangeMask(states.astype(int))
    out = denoise_mask(m, min_cells, radius)
    k = 2 * radius + 1
    grown = ndimage.binary_dilation(m.changed, structure=np.ones((k, k))) if radius else m.changed
    assert np.all(~out.changed | grown)
    np.testing.assert_array_equal(out.states == UNKNOWN, m.states == UNKNOWN)
    # surviving clusters of the input all had enough cells
    lab, n = ndimage.label(m.changed, structure=np.ones((3, 3)))
    for c in range(1, n + 1):
        region = lab == c
        if region.sum() < min_cells:
            continue
        assert out.changed[region].all()


# -- candidates --------------------------------------------------------------

def test_candidate_overlap_ratio():
    h = np.zeros((14, 14))
    h[2:12, 2:12] = 0.1
    objs = label_objects(h)
    s = np.zeros((14, 14), dtype=int)
    s[2:10, 2:12] = CHANGED
    (c,) = extract_candidates(ChangeMask(s), objs, 0.5)
    assert c.blob_id == 1 and c.overlap == pytest.approx(0.8)
    assert len(c.cells) == 80 and len(c.footprint) == 100


def test_unchanged_blob_no_candidate():
    h = np.zeros((8, 8))
    h[2:5, 2:5] = 0.1
    assert extract_candidates(ChangeMask(np.zeros((8, 8), dtype=int)), label_objects(h)) == []


def test_low_overlap_blob_dropped():
    h = np.zeros((12, 12))
    h[1:11, 1:11] = 0.1
    s = np.zeros((12, 12), dtype=int)
    s[1:3, 1:11] = CHANGED
    assert extract_candidates(ChangeMask(s), label_objects(h), 0.3) == []


def test_background_clusters_become_synthetic():
    h = np.zeros((20, 20))
    s = np.zeros((20, 20), dtype=int)
    s[1:3, 1:6] = CHANGED
    s[10:12, 10:15] = CHANGED
    cands = extract_candidates(ChangeMask(s), label_objects(h))
    assert len(cands) == 2
    assert all(c.synthetic and len(c.cells) == 10 for c in cands)


def test_halo_attached_to_touching_blob():
    h = np.zeros((12, 12))
    h[3:8, 3:8] = 0.1
    s = np.zeros((12, 12), dtype=int)
    s[2:9, 2:9] = CHANGED
    (c,) = extract_candidates(ChangeMask(s), label_objects(h))
    assert c.overlap == 1.0
    assert len(c.halo) == 49 - 25
    assert len(c.all_cells()) == 49


def test_mask_exports():
    m = ChangeMask(np.array([[UNKNOWN, UNCHANGED], [CHANGED, CHANGED]]))
    np.testing.assert_array_equal(m.to_image(), [[0, 128], [255, 255]])
    assert m.to_csv() == "-1,0\n1,1\n"
    with pytest.raises(MaskShapeError):
        extract_candidates(m, label_objects(np.zeros((3, 3))))

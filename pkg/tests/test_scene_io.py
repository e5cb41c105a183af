import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from planesdf_cd.scene_io import (FLOOR_LABEL, TABLE_LABEL, ObjectSpec, ParseError, PointCloud, ScenarioError,
                                  SyntheticScenario, generate_scene_pair, load_point_cloud, make_scenario,
                                  save_point_cloud)


def write(path, text):
    path.write_text(text)
    return str(path)


def test_three_vertex_ply(tmp_path):
    p = write(tmp_path / "a.ply", "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
              "property float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n")
    cloud = load_point_cloud(p)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.points[2], [0, 1, 0.5])
    assert cloud.colors is None


def test_ply_with_colors_labels_and_foreign_element(tmp_path):
    p = write(tmp_path / "b.ply", "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
              "property double x\nproperty double y\nproperty double z\nproperty uchar red\n"
              "property uchar green\nproperty uchar blue\nproperty int label\n"
              "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
              "1 2 3 255 0 0 7\n4 5 6 0 255 0 -1\n3 0 1 1\n")
    cloud = load_point_cloud(p)
    assert len(cloud) == 2
    np.testing.assert_array_equal(cloud.colors[0], [255, 0, 0])
    np.testing.assert_array_equal(cloud.labels, [7, -1])


def test_truncated_ply_is_an_error(tmp_path):
    body = "".join(f"{i} 0 0\n" for i in range(4))
    p = write(tmp_path / "c.ply", "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\n"
              "property float y\nproperty float z\nend_header\n" + body)
    with pytest.raises(ParseError):
        load_point_cloud(p)


def test_binary_ply_rejected(tmp_path):
    p = write(tmp_path / "d.ply", "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ParseError):
        load_point_cloud(p)


def test_non_finite_coordinate_rejected(tmp_path):
    p = write(tmp_path / "e.csv", "0,0,0\nnan,1,2\n")
    with pytest.raises(ParseError):
        load_point_cloud(p)


def test_empty_csv(tmp_path):
    p = write(tmp_path / "empty.csv", "")
    assert len(load_point_cloud(p)) == 0


def test_csv_comments_and_colors(tmp_path):
    p = write(tmp_path / "f.csv", "# header\n1,2,3,10,20,30\n\n4,5,6,0,0,0  # trailing\n")
    cloud = load_point_cloud(p)
    assert len(cloud) == 2
    np.testing.assert_array_equal(cloud.colors[0], [10, 20, 30])


def test_round_trip_100_points(tmp_path, rng):
    pts = rng.uniform(-5, 5, size=(100, 3))
    cols = rng.integers(0, 256, size=(100, 3)).astype(np.uint8)
    for name in ("r.ply", "r.csv"):
        path = str(tmp_path / name)
        save_point_cloud(PointCloud(pts, cols), path)
        back = load_point_cloud(path)
        assert np.abs(back.points - pts).max() <= 1e-6
        np.testing.assert_array_equal(back.colors, cols)


def test_save_empty_cloud(tmp_path):
    path = str(tmp_path / "empty.ply")
    save_point_cloud(PointCloud.empty(), path)
    assert "element vertex 0" in open(path).read()
    assert len(load_point_cloud(path)) == 0


def test_save_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_point_cloud(PointCloud.empty(), str(tmp_path / "missing_dir" / "x.ply"))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e3, 1e3, allow_nan=False)] * 3), max_size=40))
def test_round_trip_property(tmp_path_factory, rows):
    pts = np.array(rows, dtype=float).reshape(-1, 3)
    path = str(tmp_path_factory.mktemp("rt") / "p.ply")
    save_point_cloud(PointCloud(pts), path)
    back = load_point_cloud(path)
    # 9 significant digits
    assert np.all(np.abs(back.points - pts) <= 1e-8 * np.maximum(1.0, np.abs(pts)) + 1e-12)


# -- generator ---------------------------------------------------------------

def test_generator_deterministic():
    scn = make_scenario("move", 4, noise_sigma=0.002)
    a = generate_scene_pair(scn, 4)
    b = generate_scene_pair(make_scenario("move", 4, noise_sigma=0.002), 4)
    for x, y in zip(a[:2], b[:2]):
        assert x.points.tobytes() == y.points.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()


def test_swap_lists_both_objects():
    scn = make_scenario("swap", 1)
    _, _, gt = generate_scene_pair(scn, 1)
    assert len(gt.changed_ids) == 2
    swapped = [o for o in scn.objects if o.id in gt.changed_ids]
    assert swapped[0].source_xy == swapped[1].target_xy
    assert swapped[1].source_xy == swapped[0].target_xy
    # both directions see both objects
    assert set(np.unique(gt.source_changed.labels)) == set(gt.changed_ids)
    assert set(np.unique(gt.target_changed.labels)) == set(gt.changed_ids)


def test_unchanged_identical():
    scn = make_scenario("unchanged", 3, noise_sigma=0.002)
    src, tgt, gt = generate_scene_pair(scn, 3)
    assert gt.changed_ids == []
    assert src.points.tobytes() == tgt.points.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_remove_soundness(seed):
    sigma = 0.002
    scn = make_scenario("remove", seed, noise_sigma=sigma)
    src, tgt, gt = generate_scene_pair(scn, seed)
    (rid,) = gt.changed_ids
    obj = next(o for o in scn.objects if o.id == rid)
    assert not np.any(tgt.labels == rid)
    assert np.count_nonzero(src.labels == rid) > 100
    cx, cy = obj.source_xy
    hx, hy = obj.half_extent()
    z0 = scn.table_height
    p = tgt.points
    pad = 3 * sigma
    # the box starts above the supporting table surface
    inside = ((np.abs(p[:, 0] - cx) <= hx + pad) & (np.abs(p[:, 1] - cy) <= hy + pad)
              & (p[:, 2] > z0 + pad) & (p[:, 2] <= z0 + obj.height + pad))
    assert not inside.any()


def test_labels_and_footprints():
    scn = make_scenario("add", 2)
    src, tgt, _ = generate_scene_pair(scn, 2)
    ids = {o.id for o in scn.objects}
    for c in (src, tgt):
        labs = set(np.unique(c.labels).tolist())
        assert {TABLE_LABEL, FLOOR_LABEL} <= labs
        assert labs - {TABLE_LABEL, FLOOR_LABEL} <= ids
    scn.validate()


def test_catalog_heights_span_band_edge():
    hs = [o.height for k in ("add", "remove", "move", "swap") for s in range(10)
          for o in make_scenario(k, s).objects]
    assert min(hs) < 0.1 and max(hs) > 0.3
    assert all(0.05 <= h <= 0.35 for h in hs)


def test_object_off_table_rejected():
    bad = SyntheticScenario("move", [ObjectSpec(1, "box", (0.1, 0.1, 0.1), (0.0, 0.0), (0.7, 0.0))])
    with pytest.raises(ScenarioError):
        bad.validate()


def test_kind_inconsistent_with_ground_truth():
    same = SyntheticScenario("move", [ObjectSpec(1, "box", (0.1, 0.1, 0.1), (0.0, 0.0), (0.0, 0.0))])
    with pytest.raises(ScenarioError):
        same.validate()
    with pytest.raises(ScenarioError):
        make_scenario("explode", 0)


def test_density_controls_point_count():
    lo = generate_scene_pair(make_scenario("unchanged", 0, density=10000), 0)[0]
    hi = generate_scene_pair(make_scenario("unchanged", 0, density=40000), 0)[0]
    assert 3.0 < len(hi) / len(lo) < 5.0
